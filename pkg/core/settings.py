"""
Settings Manager - Pipeline configuration with documented defaults.

Sources, later ones win:
    DEFAULTS  ->  config file (`key = value` lines)  ->  NUCSEG_<KEY> env vars
"""
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11: same API via the backport
    import tomli as tomllib
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from config import ENV_PREFIX
from core.errors import ConfigError

# Published H&E optical-density stain vectors; the residual is derived.
DEFAULT_H_VECTOR = (0.650, 0.704, 0.286)
DEFAULT_E_VECTOR = (0.072, 0.990, 0.105)


def _default_stain_values():
    h = np.asarray(DEFAULT_H_VECTOR) / np.linalg.norm(DEFAULT_H_VECTOR)
    e = np.asarray(DEFAULT_E_VECTOR) / np.linalg.norm(DEFAULT_E_VECTOR)
    r = np.cross(h, e)
    r /= np.linalg.norm(r)
    return tuple(float(v) for v in np.concatenate([h, e, r]))


# Default settings
DEFAULTS = {
    # Stain projection
    "stain_matrix": _default_stain_values(),  # column-major H, E, residual
    "contrast_lo_pct": 1.0,
    "contrast_hi_pct": 99.0,

    # Block thresholding
    "block_size": 50,
    "bins": 64,
    "smooth_radius": 2,
    "prominence": 0.1,
    "min_separation": 8,
    "min_block_range": 80.0,  # 8-bit units of the raw projection spread
    "lambda": 0.3,

    # Size / shape priors
    "min_area_floor": 30,
    "min_area_fraction": 0.2,
    "solidity_split": 0.97,
    "defect_depth_fraction": 0.10,
    "solidity_hull_replace": 0.7,
    "split_max_depth": 3,

    # False-positive removal
    "tile_size": 200,
    "gamma": 0.1,
    "t_s": 0.6,
    "min_reference_count": 2,
    "contrast_ring": 2,
    "feature_scale": 10.0,

    # Self-training
    "tau_flip": 0.9,
    "min_class_pixels": 50,
    "ridge": 1e-4,

    # Execution
    "workers": 1,
}

# key -> (type, low, high, low_open, high_open); None = unbounded
RANGES = {
    "contrast_lo_pct": (float, 0.0, 100.0, False, True),
    "contrast_hi_pct": (float, 0.0, 100.0, True, False),
    "block_size": (int, 8, None, False, False),
    "bins": (int, 16, None, False, False),
    "smooth_radius": (int, 0, None, False, False),
    "prominence": (float, 0.0, 1.0, True, False),
    "min_separation": (int, 1, None, False, False),
    "min_block_range": (float, 0.0, 255.0, False, False),
    "lambda": (float, 0.0, 1.0, True, True),
    "min_area_floor": (int, 0, None, False, False),
    "min_area_fraction": (float, 0.0, 1.0, False, False),
    "solidity_split": (float, 0.0, 1.0, True, False),
    "defect_depth_fraction": (float, 0.0, 1.0, True, True),
    "solidity_hull_replace": (float, 0.0, 1.0, False, False),
    "split_max_depth": (int, 0, None, False, False),
    "tile_size": (int, 8, None, False, False),
    "gamma": (float, 0.0, None, True, False),
    "t_s": (float, 0.0, 1.0, True, True),
    "min_reference_count": (int, 1, None, False, False),
    "contrast_ring": (int, 1, None, False, False),
    "feature_scale": (float, 0.0, None, True, False),
    "tau_flip": (float, 0.5, 1.0, True, False),  # 1.0 disables relabeling
    "min_class_pixels": (int, 1, None, False, False),
    "ridge": (float, 0.0, None, True, False),
    "workers": (int, 1, None, False, False),
}


@dataclass(frozen=True)
class PipelineConfig:
    stain_matrix: tuple = DEFAULTS["stain_matrix"]
    contrast_lo_pct: float = DEFAULTS["contrast_lo_pct"]
    contrast_hi_pct: float = DEFAULTS["contrast_hi_pct"]
    block_size: int = DEFAULTS["block_size"]
    bins: int = DEFAULTS["bins"]
    smooth_radius: int = DEFAULTS["smooth_radius"]
    prominence: float = DEFAULTS["prominence"]
    min_separation: int = DEFAULTS["min_separation"]
    min_block_range: float = DEFAULTS["min_block_range"]
    lambda_: float = DEFAULTS["lambda"]
    min_area_floor: int = DEFAULTS["min_area_floor"]
    min_area_fraction: float = DEFAULTS["min_area_fraction"]
    solidity_split: float = DEFAULTS["solidity_split"]
    defect_depth_fraction: float = DEFAULTS["defect_depth_fraction"]
    solidity_hull_replace: float = DEFAULTS["solidity_hull_replace"]
    split_max_depth: int = DEFAULTS["split_max_depth"]
    tile_size: int = DEFAULTS["tile_size"]
    gamma: float = DEFAULTS["gamma"]
    t_s: float = DEFAULTS["t_s"]
    min_reference_count: int = DEFAULTS["min_reference_count"]
    contrast_ring: int = DEFAULTS["contrast_ring"]
    feature_scale: float = DEFAULTS["feature_scale"]
    tau_flip: float = DEFAULTS["tau_flip"]
    min_class_pixels: int = DEFAULTS["min_class_pixels"]
    ridge: float = DEFAULTS["ridge"]
    workers: int = DEFAULTS["workers"]

    def __post_init__(self):
        for f in fields(self):
            key = _file_key(f.name)
            value = getattr(self, f.name)
            if key == "stain_matrix":
                object.__setattr__(self, f.name, _check_stain_matrix(value))
            else:
                object.__setattr__(self, f.name, _check_value(key, value))
        if self.contrast_lo_pct >= self.contrast_hi_pct:
            raise ConfigError(
                "contrast_lo_pct: must be below contrast_hi_pct "
                f"({self.contrast_lo_pct} >= {self.contrast_hi_pct})"
            )

    @classmethod
    def from_dict(cls, values: dict) -> "PipelineConfig":
        """Build from file-style keys (`lambda`, not `lambda_`)."""
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            name = _field_name(key)
            if name not in known:
                raise ConfigError(f"{key}: unknown configuration key")
            kwargs[name] = value
        return cls(**kwargs)

    def replace(self, **changes) -> "PipelineConfig":
        """Copy with changes (field names), re-validated."""
        return replace(self, **changes)

    def as_dict(self) -> dict:
        """File-style key/value view."""
        return {_file_key(k): v for k, v in asdict(self).items()}

    @property
    def stains(self) -> np.ndarray:
        """Stain matrix as 3x3 with H, E, residual columns."""
        return np.asarray(self.stain_matrix, dtype=np.float64).reshape(3, 3).T


# ─── Loading ──────────────────────────────────────────────

def load_config(path=None, environ=None) -> PipelineConfig:
    """Merge defaults, an optional config file and env overrides, then validate."""
    values = dict(DEFAULTS)
    if path:
        values.update(_read_file(path))
    values.update(_read_env(os.environ if environ is None else environ))
    return PipelineConfig.from_dict(values)


def dump_config(cfg: PipelineConfig) -> str:
    """Render a config in the same `key = value` format load_config reads."""
    lines = []
    for key, value in cfg.as_dict().items():
        if isinstance(value, tuple):
            value = "[" + ", ".join(repr(float(v)) for v in value) + "]"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _read_file(path) -> dict:
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"config file {path}: {e.strerror or e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file {path}: {e}") from e

    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{key}: sections are not supported, use flat key = value lines")
        if key not in DEFAULTS:
            raise ConfigError(f"{key}: unknown configuration key (in {path})")
    return data


def _read_env(environ) -> dict:
    overrides = {}
    for key in DEFAULTS:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is None:
            continue
        try:
            overrides[key] = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            overrides[key] = raw
    return overrides


# ─── Validation ───────────────────────────────────────────

def _field_name(key):
    return "lambda_" if key == "lambda" else key


def _file_key(name):
    return "lambda" if name == "lambda_" else name


def _check_value(key, value):
    kind, lo, hi, lo_open, hi_open = RANGES[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
        if not np.isfinite(value):
            raise ConfigError(f"{key}: must be finite, got {value!r}")

    too_low = lo is not None and (value <= lo if lo_open else value < lo)
    too_high = hi is not None and (value >= hi if hi_open else value > hi)
    if too_low or too_high:
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        span = f"{left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"
        raise ConfigError(f"{key}: {value!r} outside valid range {span}")
    return value


def _check_stain_matrix(value):
    try:
        values = tuple(float(v) for v in value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"stain_matrix: expected nine numbers, got {value!r}") from e
    if len(values) != 9:
        raise ConfigError(f"stain_matrix: expected nine numbers, got {len(values)}")

    columns = np.asarray(values).reshape(3, 3)
    norms = np.linalg.norm(columns, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(columns)):
        raise ConfigError("stain_matrix: every stain vector must be finite and non-zero")
    columns = columns / norms[:, None]
    cond = np.linalg.cond(columns.T)
    if not np.isfinite(cond) or cond > 1e12:
        raise ConfigError(f"stain_matrix: singular stain matrix (condition number {cond:.3g})")
    return tuple(float(v) for v in columns.ravel())
