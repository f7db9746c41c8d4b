"""Coupled level ladders Y_0..Y_n for European calls under three SDE models.

A ladder at level n is built from one realization of driving noise on the
grid of 2**n steps; level k < n sees the same noise aggregated (Brownian
increments) or subsampled (exactly simulated paths) onto 2**k steps. All
arrays carry the batch in leading axes and time in the last axis, and ladder
functions return shape ``batch + (n - min_level + 1,)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict, fields
from typing import ClassVar, Union

import numpy as np
from scipy.special import ndtr

__all__ = [
    "BlackScholes",
    "Heston",
    "HestonHullWhite",
    "ModelSpec",
    "NoiseGrid",
    "HHWPaths",
    "coarsen_increments",
    "draw_noise",
    "bs_milstein_ladder",
    "heston_milstein_ladder",
    "hhw_paths",
    "subsample_paths",
    "hhw_ladder_from_paths",
    "hhw_semi_exact_ladder",
    "simulate_ladder",
    "european_call_payoff",
    "bs_closed_form_price",
    "model_from_dict",
    "model_to_dict",
    "param_hash",
]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _check_common(spec) -> None:
    _require(spec.s0 > 0, f"s0 must be positive, got {spec.s0!r}")
    _require(spec.maturity > 0, f"maturity must be positive, got {spec.maturity!r}")
    _require(spec.strike > 0, f"strike must be positive, got {spec.strike!r}")


def _check_feller(k, theta, sigma) -> None:
    _require(k > 0 and theta > 0, f"k and theta must be positive, got k={k!r}, theta={theta!r}")
    _require(sigma >= 0, f"sigma must be non-negative, got {sigma!r}")
    _require(2.0 * k * theta >= sigma * sigma,
             f"Feller condition 2*k*theta >= sigma**2 fails: {2 * k * theta!r} < {sigma * sigma!r}")


@dataclass(frozen=True)
class BlackScholes:
    r: float = 0.05
    sigma: float = 0.2
    s0: float = 1.0
    maturity: float = 1.0
    strike: float = 1.0
    name: ClassVar[str] = "bs"
    factors: ClassVar[int] = 1

    def __post_init__(self):
        _check_common(self)
        # zero rate/vol admitted for degenerate reference runs
        _require(self.r >= 0, f"r must be non-negative, got {self.r!r}")
        _require(self.sigma >= 0, f"sigma must be non-negative, got {self.sigma!r}")


@dataclass(frozen=True)
class Heston:
    r: float = 0.05
    k: float = 1.0
    theta: float = 0.04
    sigma: float = 0.25
    v0: float = 0.04
    s0: float = 1.0
    maturity: float = 1.0
    strike: float = 1.0
    name: ClassVar[str] = "heston"
    factors: ClassVar[int] = 2

    def __post_init__(self):
        _check_common(self)
        _require(self.r >= 0, f"r must be non-negative, got {self.r!r}")
        _require(self.v0 >= 0, f"v0 must be non-negative, got {self.v0!r}")
        _check_feller(self.k, self.theta, self.sigma)


@dataclass(frozen=True)
class HestonHullWhite:
    k: float = 3.0
    theta: float = 0.04
    sigma: float = 0.25
    alpha: float = 1.0
    beta_hw: float = 0.06
    gamma: float = 0.5
    rho: float = 0.0
    v0: float = 0.04
    r0: float = 0.05
    s0: float = 1.0
    maturity: float = 1.0
    strike: float = 1.0
    name: ClassVar[str] = "hhw"

    def __post_init__(self):
        _check_common(self)
        _check_feller(self.k, self.theta, self.sigma)
        _require(self.alpha > 0, f"alpha must be positive, got {self.alpha!r}")
        _require(self.gamma >= 0, f"gamma must be non-negative, got {self.gamma!r}")
        _require(-1.0 <= self.rho <= 1.0, f"rho must lie in [-1, 1], got {self.rho!r}")
        _require(self.v0 >= 0, f"v0 must be non-negative, got {self.v0!r}")
        _require(self.sigma > 0 or self.rho == 0,
                 "rho != 0 needs sigma > 0 (the log-price uses rho/sigma)")


ModelSpec = Union[BlackScholes, Heston, HestonHullWhite]
MODELS = {cls.name: cls for cls in (BlackScholes, Heston, HestonHullWhite)}


def model_from_dict(name: str, params: dict | None = None) -> ModelSpec:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; expected one of {sorted(MODELS)}") from None
    params = dict(params or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(params) - known)
    if unknown:
        raise ValueError(f"unknown parameters for model {name!r}: {unknown}")
    return cls(**{k: float(v) for k, v in params.items()})


def model_to_dict(spec: ModelSpec) -> dict:
    return {"model": spec.name, "params": asdict(spec)}


def param_hash(spec: ModelSpec) -> str:
    blob = json.dumps(model_to_dict(spec), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# noise


def coarsen_increments(fine: np.ndarray) -> np.ndarray:
    """Sum adjacent pairs of increments along the last axis."""
    fine = np.asarray(fine, dtype=float)
    if fine.shape[-1] % 2:
        raise ValueError(f"cannot coarsen {fine.shape[-1]} increments (odd length)")
    return fine[..., 0::2] + fine[..., 1::2]


@dataclass(frozen=True)
class NoiseGrid:
    """Brownian increments for each driving factor at the finest resolution."""

    increments: tuple[np.ndarray, ...]

    @property
    def steps(self) -> int:
        return self.increments[0].shape[-1]

    def coarsen(self) -> "NoiseGrid":
        return NoiseGrid(tuple(coarsen_increments(d) for d in self.increments))


def _level_of(steps: int) -> int:
    level = steps.bit_length() - 1
    if steps != 1 << level:
        raise ValueError(f"number of steps {steps} is not a power of two")
    return level


def draw_noise(spec: ModelSpec, level: int, size, rng: np.random.Generator):
    """Driving randomness for ``size`` ladders at ``level``.

    Brownian models get a NoiseGrid scaled to variance T/2**level; the
    Heston-Hull-White model gets exactly simulated paths.
    """
    if isinstance(spec, HestonHullWhite):
        return hhw_paths(spec, level, size, rng)
    shape = (size,) if np.isscalar(size) else tuple(size)
    sd = math.sqrt(spec.maturity / 2 ** level)
    incs = []
    for _ in range(spec.factors):
        z = rng.standard_normal(shape + (2 ** level,))
        z *= sd
        incs.append(z)
    return NoiseGrid(tuple(incs))


def european_call_payoff(terminal_price, strike, discount=1.0):
    """discount * max(S - K, 0)."""
    return discount * np.maximum(np.asarray(terminal_price, dtype=float) - strike, 0.0)


# --------------------------------------------------------------------------
# Black-Scholes, Milstein


def _bs_terminal(spec: BlackScholes, dW: np.ndarray) -> np.ndarray:
    h = spec.maturity / dW.shape[-1]
    # S_{j+1} = S_j (1 + r h + sigma dW + sigma^2/2 (dW^2 - h))
    growth = dW * (spec.sigma + 0.5 * spec.sigma ** 2 * dW)
    growth += 1.0 + spec.r * h - 0.5 * spec.sigma ** 2 * h
    return spec.s0 * np.prod(growth, axis=-1)


def bs_milstein_ladder(spec: BlackScholes, level: int, noise, min_level: int = 0) -> np.ndarray:
    dW = noise.increments[0] if isinstance(noise, NoiseGrid) else np.asarray(noise, dtype=float)
    if _level_of(dW.shape[-1]) != level:
        raise ValueError(f"noise has {dW.shape[-1]} steps, level {level} needs {2 ** level}")
    disc = math.exp(-spec.r * spec.maturity)
    out = np.empty(dW.shape[:-1] + (level - min_level + 1,))
    for k in range(level, min_level - 1, -1):
        out[..., k - min_level] = european_call_payoff(_bs_terminal(spec, dW), spec.strike, disc)
        if k > min_level:
            dW = coarsen_increments(dW)
    return out


# --------------------------------------------------------------------------
# Heston, drift-implicit Milstein


def heston_step(spec: Heston, x, v, h: float, dB1, dB2):
    """One drift-implicit Milstein step for (log S, V); V is truncated at 0."""
    sv = np.sqrt(v)
    x = x + (spec.r - 0.5 * v) * h + sv * dB1 + 0.25 * spec.sigma * dB1 * dB2
    num = v + spec.k * spec.theta * h + spec.sigma * sv * dB2 + 0.25 * spec.sigma ** 2 * (dB2 * dB2 - h)
    # the numerator is a square plus (k theta - sigma^2/4) h, so the
    # truncation only fires outside the Feller regime
    return x, np.maximum(num, 0.0) / (1.0 + spec.k * h)


def _heston_terminal(spec: Heston, dB1: np.ndarray, dB2: np.ndarray) -> np.ndarray:
    steps = dB1.shape[-1]
    h = spec.maturity / steps
    # time-major copies keep the per-step slices contiguous
    b1 = np.ascontiguousarray(np.moveaxis(dB1, -1, 0))
    b2 = np.ascontiguousarray(np.moveaxis(dB2, -1, 0))
    x = np.full(dB1.shape[:-1], math.log(spec.s0))
    v = np.full(dB1.shape[:-1], float(spec.v0))
    for j in range(steps):
        x, v = heston_step(spec, x, v, h, b1[j], b2[j])
    return np.exp(x)


def heston_milstein_ladder(spec: Heston, level: int, noise: NoiseGrid, min_level: int = 0) -> np.ndarray:
    dB1, dB2 = noise.increments
    if _level_of(dB1.shape[-1]) != level:
        raise ValueError(f"noise has {dB1.shape[-1]} steps, level {level} needs {2 ** level}")
    disc = math.exp(-spec.r * spec.maturity)
    out = np.empty(dB1.shape[:-1] + (level - min_level + 1,))
    for k in range(level, min_level - 1, -1):
        out[..., k - min_level] = european_call_payoff(_heston_terminal(spec, dB1, dB2), spec.strike, disc)
        if k > min_level:
            dB1, dB2 = coarsen_increments(dB1), coarsen_increments(dB2)
    return out


# --------------------------------------------------------------------------
# Heston-Hull-White, semi-exact


@dataclass(frozen=True)
class HHWPaths:
    """Exact variance and short-rate paths on 2**level + 1 grid points, plus the
    terminal normal shared by every level."""

    V: np.ndarray
    r: np.ndarray
    normal: np.ndarray

    @property
    def steps(self) -> int:
        return self.V.shape[-1] - 1


def cir_degrees_of_freedom(spec) -> float:
    return 4.0 * spec.k * spec.theta / spec.sigma ** 2


def cir_step(spec, v: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
    """Exact CIR transition over h: scaled noncentral chi-squared."""
    e = math.exp(-spec.k * h)
    if spec.sigma == 0:
        return spec.theta + (v - spec.theta) * e
    c = spec.sigma ** 2 * (1.0 - e) / (4.0 * spec.k)
    df = cir_degrees_of_freedom(spec)
    return c * rng.noncentral_chisquare(df, v * (e / c))


def ou_step(spec, r: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
    """Exact Ornstein-Uhlenbeck (Hull-White) transition over h."""
    e = math.exp(-spec.alpha * h)
    mean = spec.beta_hw + (r - spec.beta_hw) * e
    if spec.gamma == 0:
        return mean
    sd = spec.gamma * math.sqrt((1.0 - e * e) / (2.0 * spec.alpha))
    return mean + sd * rng.standard_normal(np.shape(r))


def hhw_paths(spec: HestonHullWhite, level: int, size, rng: np.random.Generator) -> HHWPaths:
    shape = (size,) if np.isscalar(size) else tuple(size)
    steps = 2 ** level
    h = spec.maturity / steps
    V = np.empty(shape + (steps + 1,))
    r = np.empty(shape + (steps + 1,))
    V[..., 0] = spec.v0
    r[..., 0] = spec.r0
    for j in range(steps):
        V[..., j + 1] = cir_step(spec, V[..., j], h, rng)
        r[..., j + 1] = ou_step(spec, r[..., j], h, rng)
    return HHWPaths(V, r, rng.standard_normal(shape))


def subsample_paths(paths: HHWPaths, level: int) -> HHWPaths:
    stride = paths.steps >> level
    if stride << level != paths.steps:
        raise ValueError(f"cannot subsample {paths.steps} steps to level {level}")
    return HHWPaths(paths.V[..., ::stride], paths.r[..., ::stride], paths.normal)


def _hhw_payoff(spec: HestonHullWhite, V: np.ndarray, r: np.ndarray, normal: np.ndarray) -> np.ndarray:
    T = spec.maturity
    h = T / (V.shape[-1] - 1)
    int_v = h * V[..., :-1].sum(axis=-1)
    int_r = h * r[..., :-1].sum(axis=-1)
    x = math.log(spec.s0) + int_r - 0.5 * int_v
    if spec.rho != 0:
        x += (spec.rho * spec.k / spec.sigma) * int_v
        x += (spec.rho / spec.sigma) * (V[..., -1] - spec.v0 - spec.k * spec.theta * T)
    x += math.sqrt(1.0 - spec.rho ** 2) * np.sqrt(int_v) * normal
    return european_call_payoff(np.exp(x), spec.strike, np.exp(-int_r))


def hhw_ladder_from_paths(spec: HestonHullWhite, level: int, paths: HHWPaths, min_level: int = 0) -> np.ndarray:
    if _level_of(paths.steps) != level:
        raise ValueError(f"paths have {paths.steps} steps, level {level} needs {2 ** level}")
    out = np.empty(paths.normal.shape + (level - min_level + 1,))
    for k in range(min_level, level + 1):
        stride = 1 << (level - k)
        out[..., k - min_level] = _hhw_payoff(spec, paths.V[..., ::stride], paths.r[..., ::stride], paths.normal)
    return out


def hhw_semi_exact_ladder(spec: HestonHullWhite, level: int, rng: np.random.Generator,
                          size=(), min_level: int = 0) -> np.ndarray:
    return hhw_ladder_from_paths(spec, level, hhw_paths(spec, level, size, rng), min_level)


# --------------------------------------------------------------------------


def ladder_from_noise(spec: ModelSpec, level: int, noise, min_level: int = 0) -> np.ndarray:
    if isinstance(spec, BlackScholes):
        return bs_milstein_ladder(spec, level, noise, min_level)
    if isinstance(spec, Heston):
        return heston_milstein_ladder(spec, level, noise, min_level)
    if isinstance(spec, HestonHullWhite):
        return hhw_ladder_from_paths(spec, level, noise, min_level)
    raise TypeError(f"unsupported model spec {type(spec).__name__}")


def simulate_ladder(spec: ModelSpec, level: int, size, rng: np.random.Generator,
                    min_level: int = 0) -> np.ndarray:
    """Draw fresh noise and return ``size`` coupled ladders for levels min_level..level."""
    return ladder_from_noise(spec, level, draw_noise(spec, level, size, rng), min_level)


def bs_closed_form_price(spec: BlackScholes) -> float:
    """Black-Scholes call price."""
    if not (spec.sigma > 0 and spec.maturity > 0):
        raise ValueError("closed form needs sigma > 0 and maturity > 0")
    s, K, r, sig, T = spec.s0, spec.strike, spec.r, spec.sigma, spec.maturity
    vol = sig * math.sqrt(T)
    d1 = (math.log(s / K) + (r + 0.5 * sig * sig) * T) / vol
    d2 = d1 - vol
    return float(s * ndtr(d1) - K * math.exp(-r * T) * ndtr(d2))
