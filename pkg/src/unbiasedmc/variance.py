"""Prior estimation of the level coefficients.

One pool of ladders at the proxy level supplies every (Y_{n-1}, Y_n, Y)
triple, with Y approximated by the proxy-level value and Y_{-1} = 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng
from .parallel import map_chunks
from .samplers import ModelSpec, param_hash, simulate_ladder
from .solver import BetaSeries, Provenance, KINDS

log = logging.getLogger(__name__)

MIN_SAMPLES = 1000
DEFAULT_FLOOR = 1e-12
DEFAULT_PROXY_LEVEL = 10
DEFAULT_SAMPLES = {"coupled": 500_000, "independent": 1_000_000}
# array elements per factor per chunk
_CHUNK_BUDGET = 1 << 22


@dataclass(frozen=True)
class LevelStats:
    n: int
    mean_yn: float
    mean_sq_gap_n: float       # E[(Y_n - Y)^2]
    mean_sq_gap_prev: float    # E[(Y_{n-1} - Y)^2]
    var_diff: float            # var(Y_n - Y_{n-1}); independent kind only
    samples: int
    proxy_level: int
    mean_yprev: float = 0.0
    mean_y: float = 0.0        # proxy-level sample mean
    mean_y_sq: float = 0.0     # proxy-level E[Y^2]


def _pool_chunk(spec, proxy_level, seed, c, size):
    return simulate_ladder(spec, proxy_level, size, _rng.stream(seed, _rng.PRIOR, c))


class LadderPool:
    """``samples`` independent ladders at ``proxy_level``; row i is Y_0..Y_proxy."""

    def __init__(self, spec: ModelSpec, proxy_level: int = DEFAULT_PROXY_LEVEL,
                 samples: int = 500_000, seed: int = 0, workers: int = 1):
        if samples < MIN_SAMPLES:
            raise ValueError(f"prior estimation needs at least {MIN_SAMPLES} samples, got {samples}")
        if proxy_level < 1:
            raise ValueError(f"proxy_level must be >= 1, got {proxy_level}")
        self.spec = spec
        self.proxy_level = proxy_level
        self.samples = samples
        self.seed = seed
        chunk = max(1, _CHUNK_BUDGET >> proxy_level)
        tasks = [(spec, proxy_level, seed, c, hi - lo)
                 for c, lo, hi in _rng.chunk_bounds(samples, chunk)]
        self.Y = np.concatenate(map_chunks(_pool_chunk, tasks, workers), axis=0)
        log.debug("ladder pool: %d ladders at level %d", samples, proxy_level)

    def stats(self, n: int) -> LevelStats:
        Y = self.Y
        if not 0 <= n < self.proxy_level:
            raise ValueError(f"level {n} needs proxy_level > {n}, have {self.proxy_level}")
        y = Y[:, -1]
        yn = Y[:, n]
        yp = Y[:, n - 1] if n > 0 else np.zeros_like(yn)
        d = yn - yp
        return LevelStats(
            n=n,
            mean_yn=float(yn.mean()),
            mean_sq_gap_n=float(np.mean((yn - y) ** 2)),
            mean_sq_gap_prev=float(np.mean((yp - y) ** 2)),
            var_diff=float(d.var(ddof=1)),
            samples=self.samples,
            proxy_level=self.proxy_level,
            mean_yprev=float(yp.mean()),
            mean_y=float(y.mean()),
            mean_y_sq=float(np.mean(y * y)),
        )

    def provenance(self, clamp_warnings=()) -> Provenance:
        return Provenance(self.spec.name, param_hash(self.spec), self.proxy_level,
                          self.samples, self.seed, tuple(clamp_warnings))

    def beta_source(self, kind: str = "coupled", floor: float = DEFAULT_FLOOR):
        """Callable n -> clamped beta_n, for the adaptive solver."""
        _check_kind(kind)
        mean_y = float(self.Y[:, -1].mean())

        def beta(n: int) -> float:
            value = _beta_value(self.stats(n), kind, mean_y)
            if value <= 0:
                log.warning("beta[%d] = %.3g clamped to %.3g", n, value, floor)
                return floor
            return value

        return beta


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def estimate_level_stats(spec: ModelSpec, kind: str, n: int, proxy_level: int = DEFAULT_PROXY_LEVEL,
                         samples: int = 500_000, seed: int = 0) -> LevelStats:
    _check_kind(kind)
    if proxy_level <= n:
        raise ValueError(f"proxy_level ({proxy_level}) must exceed the level ({n})")
    return LadderPool(spec, proxy_level, samples, seed).stats(n)


def _level_v(s: LevelStats, kind: str, mean_y: float) -> float:
    if kind == "coupled":
        return s.mean_sq_gap_prev - s.mean_sq_gap_n
    return s.var_diff + (mean_y - s.mean_yprev) ** 2 - (mean_y - s.mean_yn) ** 2


def _beta_value(s: LevelStats, kind: str, mean_y: float) -> float:
    v = _level_v(s, kind, mean_y)
    return v - mean_y ** 2 if s.n == 0 else v


def betas_from_stats(stats: Sequence[LevelStats], kind: str, floor: float = DEFAULT_FLOOR,
                     provenance: Provenance | None = None) -> BetaSeries:
    """beta_0 = v_0 - E(Y)^2 and beta_n = v_n; non-positive entries become ``floor``."""
    _check_kind(kind)
    if not floor > 0:
        raise ValueError(f"floor must be positive, got {floor!r}")
    if [s.n for s in stats] != list(range(len(stats))):
        raise ValueError("stats must be contiguous from n = 0")
    mean_y = stats[0].mean_y
    v = [_level_v(s, kind, mean_y) for s in stats]
    betas, clamped = [], []
    for s in stats:
        b = _beta_value(s, kind, mean_y)
        if not b > 0:
            log.warning("beta[%d] = %.3g clamped to %.3g", s.n, b, floor)
            clamped.append(s.n)
            b = floor
        betas.append(b)
    if provenance is None:
        provenance = Provenance(proxy_level=stats[0].proxy_level, samples=stats[0].samples)
    provenance = Provenance(provenance.model, provenance.param_hash, provenance.proxy_level,
                            provenance.samples, provenance.seed, tuple(clamped))
    return BetaSeries(tuple(betas), mean_y, kind, provenance, tuple(v))


def estimate_betas(spec: ModelSpec, kind: str = "coupled", levels: int = 7,
                   proxy_level: int = DEFAULT_PROXY_LEVEL, samples: int | None = None,
                   seed: int = 0, floor: float = DEFAULT_FLOOR, workers: int = 1,
                   pool: LadderPool | None = None) -> BetaSeries:
    """Estimate beta_0..beta_levels from one ladder pool."""
    _check_kind(kind)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if levels >= proxy_level:
        raise ValueError(f"levels ({levels}) must be below proxy_level ({proxy_level})")
    if pool is None:
        pool = LadderPool(spec, proxy_level, samples or DEFAULT_SAMPLES[kind], seed, workers)
    stats = [pool.stats(n) for n in range(levels + 1)]
    return betas_from_stats(stats, kind, floor, pool.provenance())
