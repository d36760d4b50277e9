"""The eight enhancement parameters and their search box."""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

PARAM_NAMES = ("alpha", "beta", "gamma", "h", "sigma_s", "lam", "d", "h_c")

# (min, max) per parameter, in PARAM_NAMES order
DEFAULT_BOUNDS = {
    "alpha": (0.5, 5.0),
    "beta": (-20.0, 50.0),
    "gamma": (0.1, 2.0),
    "h": (1.0, 50.0),
    "sigma_s": (0.0, 1.5),
    "lam": (0.0, 0.6),
    "d": (0.0, 15.0),
    "h_c": (0.0, 40.0),
}


class ParameterBoundsError(ValueError):
    def __init__(self, name: str, value: float, lo: float, hi: float):
        self.name = name
        super().__init__(f"parameter {name}={value!r} outside bounds [{lo}, {hi}]")


@dataclass(frozen=True)
class ParamVector:
    """One point of the search space, in raw (unscaled) units.

    ``lam`` is the illumination exponent (``lambda`` is reserved in Python).
    """

    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 1.0
    h: float = 1.0
    sigma_s: float = 0.0
    lam: float = 0.0
    d: float = 0.0
    h_c: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} values, got {values.size}")
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> "ParamVector":
        return type(self)(**{**self.as_dict(), **changes})


@dataclass(frozen=True)
class ParamBounds:
    lower: tuple = tuple(DEFAULT_BOUNDS[n][0] for n in PARAM_NAMES)
    upper: tuple = tuple(DEFAULT_BOUNDS[n][1] for n in PARAM_NAMES)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(PARAM_NAMES) or len(hi) != len(PARAM_NAMES):
            raise ValueError("bounds need one (min, max) pair per parameter")
        for name, a, b in zip(PARAM_NAMES, lo, hi):
            if not a < b:
                raise ValueError(f"bounds for {name} must satisfy min < max, got [{a}, {b}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_dict(cls, mapping: dict) -> "ParamBounds":
        """Build bounds from ``{name: (min, max)}``; missing names keep the defaults."""
        unknown = set(mapping) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown parameters in bounds: {sorted(unknown)}")
        merged = {**DEFAULT_BOUNDS, **{k: tuple(v) for k, v in mapping.items()}}
        return cls(
            tuple(merged[n][0] for n in PARAM_NAMES),
            tuple(merged[n][1] for n in PARAM_NAMES),
        )

    def as_dict(self) -> dict:
        return {n: (a, b) for n, a, b in zip(PARAM_NAMES, self.lower, self.upper)}

    @property
    def lower_array(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def upper_array(self) -> np.ndarray:
        return np.array(self.upper)

    def check(self, theta: ParamVector) -> None:
        for name, lo, hi in zip(PARAM_NAMES, self.lower, self.upper):
            value = getattr(theta, name)
            if not (lo <= value <= hi) or not np.isfinite(value):
                raise ParameterBoundsError(name, value, lo, hi)
