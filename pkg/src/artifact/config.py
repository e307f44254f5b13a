"""Run configuration shared by every CLI command."""
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .as2d import AS2DConfig, DEFAULT_MAX_KERNELS, DEFAULT_MIN_KERNELS
from .distill import DEFAULT_SIGMA
from .grid import MAX_PYRAMID_LEVELS
from .losses import DEFAULT_W_PH, DEFAULT_W_ST, MIN_MODES

# Fields whose defaults are repository choices rather than values taken from
# the method description; --help marks them.
UNSPECIFIED_DEFAULTS = ("scales", "scale_weights", "w_ph", "w_st", "min_mode", "sigma", "min_kernels",
                        "max_kernels")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scales: int = 4
    scale_weights: tuple = None  # None -> equal weights 1/scales
    w_ph: float = DEFAULT_W_PH
    w_st: float = DEFAULT_W_ST
    min_mode: str = "separate"
    sigma: float = DEFAULT_SIGMA
    min_kernels: tuple = DEFAULT_MIN_KERNELS
    max_kernels: tuple = DEFAULT_MAX_KERNELS
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.scales, bool) or not isinstance(self.scales, int):
            raise ConfigError("scales must be an integer")
        if not 1 <= self.scales <= MAX_PYRAMID_LEVELS:
            raise ConfigError(f"scales must be in 1..{MAX_PYRAMID_LEVELS}")
        sw = self.scale_weights
        sw = (1.0 / self.scales,) * self.scales if sw is None else tuple(float(x) for x in sw)
        if len(sw) != self.scales:
            raise ConfigError(f"scale_weights needs {self.scales} entries, got {len(sw)}")
        if any(not (x >= 0) or x == float("inf") for x in sw):
            raise ConfigError("scale_weights must be finite and non-negative")
        object.__setattr__(self, "scale_weights", sw)
        for name in ("w_ph", "w_st"):
            v = float(getattr(self, name))
            if not 0 <= v < float("inf"):
                raise ConfigError(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, v)
        if self.min_mode not in MIN_MODES:
            raise ConfigError(f"min_mode must be one of {MIN_MODES}")
        if not 0 < float(self.sigma) < float("inf"):
            raise ConfigError("sigma must be positive and finite")
        object.__setattr__(self, "sigma", float(self.sigma))
        try:
            AS2DConfig(self.min_kernels, self.max_kernels)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"AS2D kernels: {exc}") from None
        object.__setattr__(self, "min_kernels", tuple(int(k) for k in self.min_kernels))
        object.__setattr__(self, "max_kernels", tuple(int(k) for k in self.max_kernels))
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @property
    def as2d(self):
        return AS2DConfig(self.min_kernels, self.max_kernels)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return RunConfig.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        for k in ("scale_weights", "min_kernels", "max_kernels"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
