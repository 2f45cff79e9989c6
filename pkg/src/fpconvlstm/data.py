"""Image ingestion and dataset handling.

Images are binary PGM (``P5``, maxval 255). A dataset directory holds files
named ``<subject_id>__<alteration>__<idx>.pgm`` with alteration one of
``none``, ``obl``, ``zcut`` or ``crot``.
"""
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeding import rng_for
from .tensor import ShapeError, get_default_dtype

log = logging.getLogger(__name__)

ALTERATIONS = ("none", "obliteration", "zcut", "central_rotation")
FILE_TAGS = {"none": "none", "obl": "obliteration", "zcut": "zcut", "crot": "central_rotation"}
TAG_FOR = {v: k for k, v in FILE_TAGS.items()}
FILENAME_RE = re.compile(r"^(\d+)__(none|obl|zcut|crot)__(\d+)\.pgm$")


class PgmError(ValueError):
    pass


class DatasetError(ValueError):
    pass


# -- PGM ------------------------------------------------------------------------

def _header_tokens(data, count):
    """Pull ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PgmError("truncated PGM header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos:pos + 1].isspace():
        raise PgmError("PGM header not terminated by whitespace")
    return tokens, pos + 1


def load_image_pgm(data):
    """Parse binary PGM bytes into a ``[h, w, 1]`` tensor of raw 0-255 values."""
    data = bytes(data)
    if data[:2] != b"P5":
        raise PgmError(f"unsupported image format {data[:2]!r}; only binary PGM (P5) is read")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PgmError(f"malformed PGM header: {tokens!r}") from exc
    if width < 1 or height < 1:
        raise PgmError(f"invalid PGM size {width}x{height}")
    if maxval != 255:
        raise PgmError(f"maxval {maxval} unsupported; expected 255")
    need = width * height
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise PgmError(f"truncated PGM payload: expected {need} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 1)
    return pixels.astype(get_default_dtype())


def encode_pgm(img):
    """Encode a ``[h, w]`` or ``[h, w, 1]`` image to P5 bytes.

    Float images are treated as intensities in [0, 1]; integer images as
    raw 0-255 values.
    """
    a = np.asarray(img)
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise ShapeError(f"PGM holds one channel, got {a.shape[2]}")
        a = a[..., 0]
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {np.shape(img)}")
    if np.issubdtype(a.dtype, np.floating):
        a = np.rint(np.clip(a, 0.0, 1.0) * 255.0)
    a = np.clip(a, 0, 255).astype(np.uint8)
    h, w = a.shape
    return b"P5\n%d %d\n255\n" % (w, h) + a.tobytes()


def read_pgm(path):
    return load_image_pgm(Path(path).read_bytes())


def write_pgm(path, img):
    Path(path).write_bytes(encode_pgm(img))


# -- preprocessing --------------------------------------------------------------

def normalize_and_frame(img, timesteps):
    """Scale 0-255 pixels to [0, 1] and cut the image into ``timesteps``
    horizontal bands; band 0 is the top of the image.

    Returns ``[T, h / T, w, 1]``.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if timesteps < 1 or h % timesteps:
        raise ShapeError(f"{timesteps} timesteps do not divide image height {h}")
    scaled = img.astype(get_default_dtype()) / 255.0
    return scaled.reshape(timesteps, h // timesteps, w, c)


def center_fit(img, size):
    """Center-crop or zero-pad a ``[h, w, 1]`` image to ``size x size``."""
    img = np.asarray(img)
    out = np.zeros((size, size) + img.shape[2:], dtype=img.dtype)

    def spans(n):
        if n >= size:
            start = (n - size) // 2
            return slice(start, start + size), slice(0, size)
        start = (size - n) // 2
        return slice(0, n), slice(start, start + n)

    (sy, dy), (sx, dx) = spans(img.shape[0]), spans(img.shape[1])
    out[dy, dx] = img[sy, sx]
    return out


def one_hot_encode(label, num_classes, dtype=None):
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} outside [0, {num_classes})")
    v = np.zeros(num_classes, dtype=dtype or get_default_dtype())
    v[label] = 1.0
    return v


# -- datasets -------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    subject: int
    alteration: str
    frames: np.ndarray = field(repr=False)
    name: str = ""

    def __post_init__(self):
        if self.alteration not in ALTERATIONS:
            raise DatasetError(f"unknown alteration {self.alteration!r}")


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    num_classes: int
    provenance: str = "synthetic"
    subject_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.num_classes < 2:
            raise DatasetError(f"a dataset needs at least 2 classes, got {self.num_classes}")
        labels = {s.subject for s in self.samples}
        if any(not 0 <= k < self.num_classes for k in labels):
            raise DatasetError("sample label outside [0, num_classes)")

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self):
        return np.array([s.subject for s in self.samples], dtype=np.int64)

    def frames(self):
        return np.stack([s.frames for s in self.samples])

    def targets(self, dtype=None):
        eye = np.eye(self.num_classes, dtype=dtype or get_default_dtype())
        return eye[self.labels]

    def subset(self, indices):
        return Dataset(tuple(self.samples[i] for i in indices), self.num_classes,
                       self.provenance, self.subject_ids)

    def check_dense(self):
        present = set(self.labels.tolist())
        missing = sorted(set(range(self.num_classes)) - present)
        if missing:
            raise DatasetError(f"classes without samples: {missing[:10]}")


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def validation_count(n, fraction):
    """Per-class validation size: round half up, clamped to ``[1, n - 1]``."""
    return min(max(_round_half_up(n * fraction), 1), n - 1)


def stratified_split(d, val_fraction=1 / 3, seed=0):
    """Per-class shuffled split into ``(train, val)`` keeping class proportions.

    Both parts keep the original sample order.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    labels = d.labels
    val_idx = []
    for k in range(d.num_classes):
        members = np.flatnonzero(labels == k)
        if members.size < 2:
            raise DatasetError(f"class {k} has {members.size} sample(s); need at least 2")
        perm = rng_for(seed, 0x5917, k).permutation(members.size)
        val_idx.extend(members[perm[:validation_count(members.size, val_fraction)]].tolist())
    is_val = np.zeros(len(d), dtype=bool)
    is_val[val_idx] = True
    return d.subset(np.flatnonzero(~is_val)), d.subset(np.flatnonzero(is_val))


def parse_filename(name):
    """``(subject_id, alteration, index)`` or ``None`` if the name does not match."""
    m = FILENAME_RE.match(name)
    if not m:
        return None
    return int(m.group(1)), FILE_TAGS[m.group(2)], int(m.group(3))


def sample_filename(subject_id, alteration, index):
    return f"{subject_id}__{TAG_FOR[alteration]}__{index}.pgm"


def load_dataset_dir(path, timesteps=8, image_size=96, provenance="external"):
    """Load every conforming ``*.pgm`` under ``path`` into a :class:`Dataset`.

    Subject ids are mapped to dense class indices in ascending id order.
    Non-conforming names are skipped with a warning.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"data directory {root} does not exist")
    entries = []
    for f in sorted(root.glob("*.pgm")):
        parsed = parse_filename(f.name)
        if parsed is None:
            log.warning("skipping %s: name does not follow <subject>__<alteration>__<idx>.pgm",
                        f.name)
            continue
        entries.append((parsed, f))
    if not entries:
        raise DatasetError(f"no usable PGM files in {root}")
    ids = sorted({p[0] for p, _ in entries})
    index_of = {sid: k for k, sid in enumerate(ids)}
    samples = []
    for (sid, alteration, _), f in entries:
        img = read_pgm(f)
        if img.shape[:2] != (image_size, image_size):
            img = center_fit(img, image_size)
        samples.append(Sample(index_of[sid], alteration, normalize_and_frame(img, timesteps),
                              f.name))
    return Dataset(tuple(samples), len(ids), provenance, tuple(ids))
