"""``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored; unknown keys are an error.
Command-line flags override file values; the fully resolved config is
written next to the run's outputs.
"""
from dataclasses import dataclass, fields, replace
from pathlib import Path


class RunConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # model
    variant: str = "convlstm"
    timesteps: int = 8
    hidden_channels: int = 64
    kernel: str = "3x3"
    dropout_rate: float = 0.5
    dense_units: int = 100
    seed: int = 0
    # data
    image_size: int = 96
    val_fraction: float = 1 / 3
    # training
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    # synthetic generation
    subjects: int = 20
    impressions: int = 10
    freq_min: float = 0.08
    freq_max: float = 0.12
    noise: float = 0.05
    obliteration_radius: float = 0.0  # 0 -> image side / 5
    zcut_width: float = 4.0
    rotation_radius: float = 0.0  # 0 -> image side / 4
    rotation_angle: float = 90.0

    @property
    def kernel_size(self):
        parts = str(self.kernel).lower().split("x")
        return (int(parts[0]), int(parts[-1]))

    def with_overrides(self, overrides):
        """Copy with non-``None`` entries of ``overrides`` applied (typed by field)."""
        return replace(self, **_coerce({k: v for k, v in overrides.items() if v is not None}))

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(values):
    out = {}
    for key, value in values.items():
        if key not in _TYPES:
            raise RunConfigError(f"unknown config key {key!r}")
        try:
            out[key] = _TYPES[key](value)
        except ValueError as exc:
            raise RunConfigError(f"bad value for {key}: {value!r}") from exc
    return out


def parse_run_config(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RunConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return RunConfig().with_overrides(values)


def load_run_config(path=None):
    if path is None:
        return RunConfig()
    return parse_run_config(Path(path).read_text())
