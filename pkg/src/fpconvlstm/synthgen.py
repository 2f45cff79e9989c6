"""Deterministic synthetic fingerprints and the three damage types.

Each subject owns a smooth ridge-phase field: a blend of parallel ridges
and elliptical whorl rings around a core point, warped by a few
low-frequency sinusoids. An impression evaluates that field on a
slightly rotated and shifted pixel grid, soft-thresholds the sinusoid and
adds Gaussian noise. Randomness comes only from :func:`seeding.rng_for`
keyed on ``(seed, subject[, impression])``.
"""
import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import ALTERATIONS, Dataset, Sample, normalize_and_frame, sample_filename, write_pgm
from .seeding import rng_for
from .tensor import get_default_dtype

DAMAGE_KINDS = ("obliteration", "zcut", "central_rotation")

_SUBJECT_STREAM = 0x5B1
_IMPRESSION_STREAM = 0x1A9
_ALTERATION_STREAM = 0xA17

RIDGE_GAIN = 3.0
MAX_ROTATION_DEG = 3.0
MAX_SHIFT_PX = 2.0


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    num_subjects: int = 20
    impressions_per_subject: int = 10
    image_size: int = 96
    freq_min: float = 0.08
    freq_max: float = 0.12
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_subjects < 2:
            raise ValueError(f"num_subjects must be >= 2, got {self.num_subjects}")
        if self.impressions_per_subject < 1:
            raise ValueError("impressions_per_subject must be >= 1")
        if self.image_size < 8:
            raise ValueError(f"image_size must be >= 8, got {self.image_size}")
        if not 0.0 < self.freq_min <= self.freq_max < 0.5:
            raise ValueError(
                f"ridge frequency range ({self.freq_min}, {self.freq_max}) must lie in (0, 0.5)"
            )
        if self.noise < 0:
            raise ValueError("noise amplitude must be non-negative")


@dataclass(frozen=True)
class _SubjectField:
    freq: float
    core: tuple
    angle: float
    radial_weight: float
    ellipticity: float
    warps: tuple  # (amplitude, ky, kx, phase)


def _subject_field(subject_id, cfg):
    rng = rng_for(cfg.seed, _SUBJECT_STREAM, subject_id)
    n = cfg.image_size
    freq = rng.uniform(cfg.freq_min, cfg.freq_max)
    core = tuple(n / 2 + rng.uniform(-0.15, 0.15, size=2) * n)
    angle = rng.uniform(0, np.pi)
    radial_weight = rng.uniform(0.2, 0.8)
    ellipticity = rng.uniform(0.5, 1.5)
    warps = []
    for _ in range(3):
        amp = rng.uniform(0.5, 2.5)
        k = 2 * np.pi * rng.uniform(0.5, 1.5) / n
        direction = rng.uniform(0, 2 * np.pi)
        warps.append((amp, k * np.sin(direction), k * np.cos(direction), rng.uniform(0, 2 * np.pi)))
    return _SubjectField(freq, core, angle, radial_weight, ellipticity, tuple(warps))


def _ridge_phase(field, y, x):
    dy, dx = y - field.core[0], x - field.core[1]
    along = dx * np.cos(field.angle) + dy * np.sin(field.angle)
    across = -dx * np.sin(field.angle) + dy * np.cos(field.angle)
    radius = np.sqrt(along ** 2 + (field.ellipticity * across) ** 2)
    w = field.radial_weight
    phase = 2 * np.pi * field.freq * ((1 - w) * along + w * radius)
    for amp, ky, kx, ph in field.warps:
        phase = phase + amp * np.sin(ky * y + kx * x + ph)
    return phase


def _check_ids(subject_id, impression_id, cfg):
    if not 0 <= subject_id < cfg.num_subjects:
        raise ValueError(f"subject {subject_id} outside [0, {cfg.num_subjects})")
    if not 0 <= impression_id < cfg.impressions_per_subject:
        raise ValueError(f"impression {impression_id} outside [0, {cfg.impressions_per_subject})")


def generate_fingerprint(subject_id, impression_id, cfg):
    """One ``[n, n, 1]`` image in [0, 1] (float64)."""
    _check_ids(subject_id, impression_id, cfg)
    field = _subject_field(subject_id, cfg)
    rng = rng_for(cfg.seed, _IMPRESSION_STREAM, subject_id, impression_id)
    n = cfg.image_size
    # jitter ~ N(0, bound / 3) clipped to the bound
    rot = np.deg2rad(np.clip(rng.normal(0, MAX_ROTATION_DEG / 3), -MAX_ROTATION_DEG,
                             MAX_ROTATION_DEG))
    shift_y, shift_x = np.clip(rng.normal(0, MAX_SHIFT_PX / 3, size=2), -MAX_SHIFT_PX,
                               MAX_SHIFT_PX)
    c = (n - 1) / 2
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    # impression grid: rotate about the image center, then translate
    gy = np.cos(rot) * (yy - c) + np.sin(rot) * (xx - c) + c + shift_y
    gx = -np.sin(rot) * (yy - c) + np.cos(rot) * (xx - c) + c + shift_x
    ridges = 0.5 + 0.5 * np.tanh(RIDGE_GAIN * np.sin(_ridge_phase(field, gy, gx)))
    img = ridges + cfg.noise * rng.standard_normal((n, n))
    return np.clip(img, 0.0, 1.0)[..., None]


# -- alterations ----------------------------------------------------------------

@dataclass(frozen=True)
class AlterationKind:
    """Damage parameters; ``None`` fields take image-size-dependent defaults.

    ``center`` is ``(row, col)``. ``radius`` is the obliteration disc or the
    rotated patch radius; ``width`` the Z-cut stroke width; ``angle`` the
    patch rotation in degrees; ``size`` the Z-cut bounding-box side.
    """
    tag: str
    center: tuple = None
    radius: float = None
    width: float = 4.0
    angle: float = 90.0
    size: float = None

    def __post_init__(self):
        if self.tag not in DAMAGE_KINDS:
            raise ValueError(f"alteration tag must be one of {DAMAGE_KINDS}, got {self.tag!r}")

    def resolved(self, shape, seed):
        """Fill defaults for an image of ``shape`` and check the geometry fits."""
        h, w = shape[:2]
        side = min(h, w)
        rng = rng_for(seed, _ALTERATION_STREAM, DAMAGE_KINDS.index(self.tag))
        k = self
        if self.tag == "obliteration":
            r = side / 5 if self.radius is None else self.radius
            center = self.center
            if center is None:
                center = (rng.uniform(r, h - 1 - r), rng.uniform(r, w - 1 - r))
            k = replace(self, radius=r, center=tuple(center))
            _check_disc(k.center, r, h, w)
        elif self.tag == "central_rotation":
            r = side / 4 if self.radius is None else self.radius
            center = self.center if self.center is not None else ((h - 1) / 2, (w - 1) / 2)
            k = replace(self, radius=r, center=tuple(center))
            _check_disc(k.center, r, h, w)
        else:
            size = side / 2 if self.size is None else self.size
            half = self.width / 2
            lo, hi_y, hi_x = half, h - 1 - half - size, w - 1 - half - size
            if size <= self.width or hi_y < lo or hi_x < lo:
                raise GeometryError(f"Z-cut of size {size} and width {self.width} "
                                    f"does not fit a {h}x{w} image")
            center = self.center
            if center is None:
                center = (rng.uniform(lo, hi_y) + size / 2, rng.uniform(lo, hi_x) + size / 2)
            top, left = center[0] - size / 2, center[1] - size / 2
            if top < lo or left < lo or top > hi_y or left > hi_x:
                raise GeometryError(f"Z-cut centered at {center} overflows the image")
            k = replace(self, size=size, center=tuple(center))
        return k


def _check_disc(center, r, h, w):
    cy, cx = center
    if r <= 0 or cy - r < 0 or cx - r < 0 or cy + r > h - 1 or cx + r > w - 1:
        raise GeometryError(f"disc of radius {r} at {center} does not fit a {h}x{w} image")


def obliteration(**kw):
    return AlterationKind("obliteration", **kw)


def zcut(**kw):
    return AlterationKind("zcut", **kw)


def central_rotation(**kw):
    return AlterationKind("central_rotation", **kw)


def _segment_distance(yy, xx, p, q):
    py, px = p
    vy, vx = q[0] - py, q[1] - px
    t = np.clip(((yy - py) * vy + (xx - px) * vx) / (vy * vy + vx * vx), 0.0, 1.0)
    return np.hypot(yy - (py + t * vy), xx - (px + t * vx))


def alteration_region(shape, kind, seed=0):
    """Boolean ``[h, w]`` mask of the pixels ``kind`` may change."""
    h, w = shape[:2]
    k = kind.resolved(shape, seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if k.tag in ("obliteration", "central_rotation"):
        return (yy - k.center[0]) ** 2 + (xx - k.center[1]) ** 2 <= k.radius ** 2
    top, left = k.center[0] - k.size / 2, k.center[1] - k.size / 2
    bottom, right = top + k.size, left + k.size
    strokes = [((top, left), (top, right)), ((top, right), (bottom, left)),
               ((bottom, left), (bottom, right))]
    dist = np.min([_segment_distance(yy, xx, p, q) for p, q in strokes], axis=0)
    return dist <= k.width / 2


def _bilinear(img, sy, sx):
    h, w = img.shape
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    y0 = np.minimum(np.floor(sy).astype(np.int64), h - 2)
    x0 = np.minimum(np.floor(sx).astype(np.int64), w - 2)
    fy, fx = sy - y0, sx - x0
    return (img[y0, x0] * (1 - fy) * (1 - fx) + img[y0, x0 + 1] * (1 - fy) * fx
            + img[y0 + 1, x0] * fy * (1 - fx) + img[y0 + 1, x0 + 1] * fy * fx)


def apply_alteration(img, kind, seed=0):
    """Damage ``img`` (``[h, w]`` or ``[h, w, 1]``); pixels outside
    :func:`alteration_region` are returned unchanged."""
    img = np.asarray(img)
    plane = img[..., 0] if img.ndim == 3 else img
    k = kind.resolved(plane.shape, seed)
    mask = alteration_region(plane.shape, k, seed)
    out = plane.copy()
    if k.tag == "obliteration":
        rng = rng_for(seed, _ALTERATION_STREAM, 0x0B1)
        out[mask] = rng.uniform(0.4, 0.6, size=int(mask.sum()))
    elif k.tag == "zcut":
        out[mask] = 1.0
    else:
        ys, xs = np.nonzero(mask)
        a = np.deg2rad(k.angle)
        dy, dx = ys - k.center[0], xs - k.center[1]
        # inverse rotation: where each destination pixel samples from
        sy = np.cos(a) * dy - np.sin(a) * dx + k.center[0]
        sx = np.sin(a) * dy + np.cos(a) * dx + k.center[1]
        out[ys, xs] = _bilinear(plane, sy, sx)
    return out[..., None] if img.ndim == 3 else out


# -- datasets -------------------------------------------------------------------

LAYOUTS = ("all", "mixed")


def default_alterations():
    return {tag: AlterationKind(tag) for tag in DAMAGE_KINDS}


def iter_images(cfg, alterations=None, layout="all"):
    """Yield ``(subject, impression, alteration, image)``.

    ``all`` emits the pristine image plus every damaged version per
    impression; ``mixed`` emits one image per impression, cycling through
    pristine, obliteration, Z-cut and central rotation.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    alterations = alterations or default_alterations()
    for s in range(cfg.num_subjects):
        for i in range(cfg.impressions_per_subject):
            base = generate_fingerprint(s, i, cfg)
            kinds = ALTERATIONS if layout == "all" else (ALTERATIONS[i % len(ALTERATIONS)],)
            for tag in kinds:
                if tag == "none":
                    yield s, i, tag, base
                else:
                    seed = int(rng_for(cfg.seed, _ALTERATION_STREAM, s, i).integers(2 ** 62))
                    yield s, i, tag, apply_alteration(base, alterations[tag], seed)


def quantize(img):
    """Snap intensities to the 256 levels a PGM file can hold."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0)


def synthetic_dataset(cfg, timesteps=8, alterations=None, layout="mixed"):
    """In-memory :class:`Dataset`, pixel-identical to writing PGMs and reloading."""
    samples = [
        Sample(s, tag, normalize_and_frame(quantize(img).astype(get_default_dtype()), timesteps),
               sample_filename(s, tag, i))
        for s, i, tag, img in iter_images(cfg, alterations, layout)
    ]
    return Dataset(tuple(samples), cfg.num_subjects, "synthetic", tuple(range(cfg.num_subjects)))


def write_dataset(cfg, out_dir, alterations=None, layout="all"):
    """Write PGMs plus ``manifest.csv``; returns the number of images."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s, i, tag, img in iter_images(cfg, alterations, layout):
        name = sample_filename(s, tag, i)
        write_pgm(out / name, quantize(img).astype(np.uint8))
        rows.append((s, tag, i, name))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "alteration", "impression", "path"])
        writer.writerows(rows)
    return len(rows)
