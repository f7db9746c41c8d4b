"""Coupled-sum and independent-sum randomized estimators and batch runner."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import rng as _rng
from .parallel import map_chunks
from .samplers import ModelSpec, draw_noise, ladder_from_noise
from .solver import RandomizationLaw

__all__ = [
    "MAX_LEVEL",
    "EstimatorSample",
    "BenchResult",
    "sample_level",
    "sample_levels",
    "coupled_sum_draws",
    "independent_sum_draws",
    "coupled_sum_draw",
    "independent_sum_draw",
    "run_batch",
]

MAX_LEVEL = 62
ESTIMATORS = ("coupled", "independent")
WORK_CONVENTION = {
    "coupled": "sum_{n<=N} 2^n",
    "independent": "1 + sum_{1<=n<=N} (2^n + 2^(n-1))",
}
_CHUNK = 1 << 14
_ELEMENT_BUDGET = 1 << 22


@dataclass(frozen=True)
class EstimatorSample:
    z: float
    level: int
    work_units: float


def sample_levels(law: RandomizationLaw, u) -> tuple[np.ndarray, int]:
    """Inverse-CDF levels N = min{n >= 0 : P(N >= n+1) <= u} for u in [0, 1).

    Returns the levels and how many hit the MAX_LEVEL cap.
    """
    u = np.asarray(u, dtype=float)
    m = law.m
    tails = np.asarray(law.head[1:])
    N = np.searchsorted(-tails, -u, side="left").astype(np.int64)
    deep = N >= m
    if np.any(deep):
        ud = u[deep]
        fm, rho = law.head[-1], law.tail_ratio
        with np.errstate(divide="ignore"):
            k = np.ceil(np.log(ud / fm) / math.log(rho))
        k = np.minimum(np.maximum(k, 1.0), float(MAX_LEVEL + 1 - m + 1))
        # repair float rounding at the boundaries
        k = np.where(fm * rho ** k > ud, k + 1, k)
        k = np.where((k > 1) & (fm * rho ** (k - 1) <= ud), k - 1, k)
        N[deep] = m - 1 + k.astype(np.int64)
    capped = N > MAX_LEVEL
    N[capped] = MAX_LEVEL
    return N, int(capped.sum())


def sample_level(law: RandomizationLaw, u: float) -> int:
    N, _ = sample_levels(law, np.array([u]))
    return int(N[0])


def _pieces(idx: np.ndarray, level: int):
    step = max(1, _ELEMENT_BUDGET >> level)
    for s in range(0, idx.size, step):
        yield idx[s : s + step]


def coupled_sum_draws(law: RandomizationLaw, spec: ModelSpec, size: int, rng: np.random.Generator):
    """``size`` coupled-sum samples; returns (z, N, work, cap_hits)."""
    N, caps = sample_levels(law, rng.random(size))
    z = np.empty(size)
    inv_F = 1.0 / law.tail_probs(int(N.max()) if size else 0)
    for n in np.unique(N):
        n = int(n)
        for idx in _pieces(np.flatnonzero(N == n), n):
            Y = ladder_from_noise(spec, n, draw_noise(spec, n, idx.size, rng))
            delta = np.diff(Y, axis=-1, prepend=0.0)
            z[idx] = delta @ inv_F[: n + 1]
    work = np.ldexp(1.0, N + 1) - 1.0
    return z, N, work, caps


def independent_sum_draws(law: RandomizationLaw, spec: ModelSpec, size: int, rng: np.random.Generator):
    """``size`` independent-sum samples; each increment comes from its own coupled pair."""
    N, caps = sample_levels(law, rng.random(size))
    z = np.zeros(size)
    top = int(N.max()) if size else 0
    inv_F = 1.0 / law.tail_probs(top)
    for n in range(top + 1):
        for idx in _pieces(np.flatnonzero(N >= n), n):
            pair = ladder_from_noise(spec, n, draw_noise(spec, n, idx.size, rng), max(n - 1, 0))
            delta = pair[:, 0] if n == 0 else pair[:, 1] - pair[:, 0]
            z[idx] += delta * inv_F[n]
    # 1 for the level-0 draw, 2^n + 2^(n-1) per pair above it
    work = 1.0 + 1.5 * (np.ldexp(1.0, N + 1) - 2.0)
    return z, N, work, caps


_DRAWS = {"coupled": coupled_sum_draws, "independent": independent_sum_draws}


def coupled_sum_draw(law: RandomizationLaw, spec: ModelSpec, rng: np.random.Generator) -> EstimatorSample:
    z, N, w, _ = coupled_sum_draws(law, spec, 1, rng)
    return EstimatorSample(float(z[0]), int(N[0]), float(w[0]))


def independent_sum_draw(law: RandomizationLaw, spec: ModelSpec, rng: np.random.Generator) -> EstimatorSample:
    z, N, w, _ = independent_sum_draws(law, spec, 1, rng)
    return EstimatorSample(float(z[0]), int(N[0]), float(w[0]))


# --------------------------------------------------------------------------
# batches


@dataclass
class _Moments:
    count: int
    mean: float
    m2: float

    @classmethod
    def of(cls, x: np.ndarray) -> "_Moments":
        mean = float(x.mean())
        return cls(x.size, mean, float(np.sum((x - mean) ** 2)))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return _Moments(n, mean, m2)

    def var(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


def _batch_chunk(kind, law, spec, seed, c, size):
    z, N, work, caps = _DRAWS[kind](law, spec, size, _rng.stream(seed, _rng.BATCH, c))
    counts = np.bincount(N, minlength=MAX_LEVEL + 1)
    return _Moments.of(z), _Moments.of(work), caps, counts


@dataclass(frozen=True)
class BenchResult:
    n_samples: int
    mean: float
    variance_of_mean: float
    wall_time_s: float
    mean_work_units: float
    var_time_product: float
    var_work_product: float
    estimator: str = "coupled"
    second_moment: float = float("nan")
    work_variance_of_mean: float = 0.0
    cap_hits: int = 0
    level_counts: tuple[int, ...] = ()
    work_convention: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_counts"] = list(self.level_counts)
        return d


def run_batch(estimator_kind: str, law: RandomizationLaw, spec: ModelSpec, n_samples: int,
              seed: int, workers: int = 1) -> BenchResult:
    """Draw ``n_samples`` estimator samples, deterministic in ``seed``.

    Samples are processed in fixed chunks, each with its own stream, and the
    chunk moments are merged in chunk order, so the result does not depend on
    ``workers``. ``var_work_product`` is variance_of_mean times total work,
    i.e. the sample estimate of var(Z) * E(tau).
    """
    if estimator_kind not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator_kind!r}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    tasks = [(estimator_kind, law, spec, seed, c, hi - lo)
             for c, lo, hi in _rng.chunk_bounds(n_samples, _CHUNK)]
    t0 = time.perf_counter()
    parts = map_chunks(_batch_chunk, tasks, workers)
    wall = time.perf_counter() - t0

    zm, wm, caps, counts = parts[0]
    for z2, w2, c2, k2 in parts[1:]:
        zm, wm, caps, counts = zm.merge(z2), wm.merge(w2), caps + c2, counts + k2
    var_mean = zm.var() / n_samples
    last = int(np.flatnonzero(counts).max())
    return BenchResult(
        n_samples=n_samples,
        mean=zm.mean,
        variance_of_mean=var_mean,
        wall_time_s=wall,
        mean_work_units=wm.mean,
        var_time_product=var_mean * wall,
        var_work_product=var_mean * wm.mean * n_samples,
        estimator=estimator_kind,
        second_moment=zm.m2 / n_samples + zm.mean ** 2,
        work_variance_of_mean=wm.var() / n_samples,
        cap_hits=caps,
        level_counts=tuple(int(x) for x in counts[: last + 1]),
        work_convention=WORK_CONVENTION[estimator_kind],
    )
