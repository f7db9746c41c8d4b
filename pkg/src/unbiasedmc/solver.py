"""Work-optimal randomization laws for randomized telescoping-sum estimators.

Costs follow the dyadic rule t_n = 2**n throughout. Tail probabilities are
written F[n] = P(N >= n) with F[0] = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Provenance",
    "BetaSeries",
    "Block",
    "PooledBlockList",
    "RandomizationLaw",
    "SolverReport",
    "L2Diagnostic",
    "level_costs",
    "pool_adjacent_violators",
    "solve_truncated",
    "tail_ratio",
    "adaptive_solve",
    "subcanonical",
    "evaluate_objective",
    "expected_work",
    "check_l2_condition",
]

KINDS = ("coupled", "independent")


@dataclass(frozen=True)
class Provenance:
    model: str = "unknown"
    param_hash: str = ""
    proxy_level: int = 0
    samples: int = 0
    seed: Optional[int] = None
    clamp_warnings: tuple[int, ...] = ()


@dataclass(frozen=True)
class BetaSeries:
    """Level coefficients beta_0..beta_M and the E(Y) estimate they came with.

    ``raw`` holds the unclamped v_n (or v~_n) estimates when available.
    """

    values: tuple[float, ...]
    mean_y: float = float("nan")
    kind: str = "coupled"
    provenance: Provenance = field(default_factory=Provenance)
    raw: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(b) for b in self.values))
        object.__setattr__(self, "raw", tuple(float(v) for v in self.raw))
        if len(self.values) < 2:
            raise ValueError(f"BetaSeries needs at least 2 values, got {len(self.values)}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")

    def __len__(self):
        return len(self.values)

    def __getitem__(self, n):
        return self.values[n]

    def prefix(self, m: int) -> np.ndarray:
        if m + 1 > len(self.values):
            raise ValueError(f"need beta_0..beta_{m}, series has {len(self.values)} values")
        return np.asarray(self.values[: m + 1], dtype=float)


def level_costs(m: int) -> np.ndarray:
    """t_n = 2**n for n = 0..m."""
    return np.ldexp(1.0, np.arange(m + 1))


def _check_positive(beta: np.ndarray) -> None:
    bad = np.flatnonzero(~(beta > 0))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"beta[{i}] = {beta[i]!r} is not positive")


@dataclass(frozen=True)
class Block:
    L: int
    R: int
    V: float


@dataclass(frozen=True)
class PooledBlockList:
    blocks: tuple[Block, ...]
    mu: float = 1.0

    @property
    def m(self) -> int:
        return self.blocks[-1].R

    def step_values(self) -> np.ndarray:
        """Expand block values onto indices 0..m."""
        out = np.empty(self.m + 1)
        for b in self.blocks:
            out[b.L : b.R + 1] = b.V
        return out

    def last_is_singleton(self) -> bool:
        b = self.blocks[-1]
        return b.L == b.R


class _Pool:
    """Incremental stack of pooled blocks; push one index at a time."""

    def __init__(self, mu: float = 1.0):
        if not mu > 0:
            raise ValueError(f"mu must be positive, got {mu!r}")
        self.mu = mu
        # each entry: [L, R, sum_beta, sum_t, V]
        self.stack: list[list] = []

    def push(self, n: int, beta_n: float) -> None:
        if not beta_n > 0:
            raise ValueError(f"beta[{n}] = {beta_n!r} is not positive")
        t_n = math.ldexp(1.0, n)
        self.stack.append([n, n, beta_n, t_n, math.sqrt(beta_n / (self.mu * t_n))])
        s = self.stack
        # ties merge
        while len(s) > 1 and s[-2][4] <= s[-1][4]:
            right = s.pop()
            left = s[-1]
            left[1] = right[1]
            left[2] += right[2]
            left[3] += right[3]
            left[4] = math.sqrt(left[2] / (self.mu * left[3]))

    def blocks(self) -> PooledBlockList:
        return PooledBlockList(tuple(Block(L, R, V) for L, R, _, _, V in self.stack), self.mu)


def pool_adjacent_violators(beta: Sequence[float], mu: float = 1.0) -> PooledBlockList:
    """Solve the dual problem min sum(beta/F + mu*t*F) over non-increasing F > 0.

    Returns the block partition of 0..m with strictly decreasing block values
    sqrt(sum(beta) / (mu * sum(t))).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("beta must be a non-empty 1-d sequence")
    _check_positive(beta)
    pool = _Pool(mu)
    for n, b in enumerate(beta):
        pool.push(n, float(b))
    return pool.blocks()


def solve_truncated(beta: Sequence[float] | BetaSeries, m: Optional[int] = None):
    """m-truncated optimal tail probabilities.

    Returns ``(F, blocks)`` where F[0] = 1 and F is the pooled step function
    normalised by its first value.
    """
    if isinstance(beta, BetaSeries):
        beta = beta.prefix(len(beta) - 1 if m is None else m)
    else:
        beta = np.asarray(beta, dtype=float)
        if m is not None:
            beta = beta[: m + 1]
    blocks = pool_adjacent_violators(beta, 1.0)
    steps = blocks.step_values()
    F = steps / steps[0]
    F[0] = 1.0
    return F, blocks


def tail_ratio(beta_m: float, beta_m1: float) -> float:
    """Optimal geometric tail factor sqrt(beta_{m+1} / (2 beta_m))."""
    if not (beta_m > 0 and beta_m1 > 0):
        raise ValueError(f"tail_ratio needs positive inputs, got {beta_m!r}, {beta_m1!r}")
    return math.sqrt(beta_m1 / (2.0 * beta_m))


def approx_tail_ratio(p: float) -> float:
    return 2.0 ** (-(2.0 * p + 1.0) / 2.0)


@dataclass(frozen=True)
class RandomizationLaw:
    """Law of the random level N: explicit head F_0..F_m, then F_m * rho**(n-m)."""

    head: tuple[float, ...]
    tail_ratio: float
    p: float = 1.0
    report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        head = tuple(float(f) for f in self.head)
        object.__setattr__(self, "head", head)
        if not head:
            raise ValueError("law head must not be empty")
        if head[0] != 1.0:
            raise ValueError(f"head[0] must be 1, got {head[0]!r}")
        for n, f in enumerate(head):
            if not (f > 0 and math.isfinite(f)):
                raise ValueError(f"head[{n}] = {f!r} must be positive and finite")
            if n and f > head[n - 1]:
                raise ValueError(f"head increases at index {n}: {head[n - 1]!r} -> {f!r}")
        rho = self.tail_ratio
        if not (rho > 0):
            raise ValueError(f"tail_ratio must be positive, got {rho!r}")
        if not (2.0 * rho < 1.0):
            raise ValueError(f"tail_ratio {rho!r} >= 1/2 gives infinite expected work")

    @property
    def m(self) -> int:
        return len(self.head) - 1

    def tail_prob(self, n: int) -> float:
        """P(N >= n)."""
        if n <= 0:
            return 1.0
        if n <= self.m:
            return self.head[n]
        return self.head[-1] * self.tail_ratio ** (n - self.m)

    def tail_probs(self, upto: int) -> np.ndarray:
        """P(N >= n) for n = 0..upto."""
        n = np.arange(upto + 1)
        out = self.head[-1] * self.tail_ratio ** np.maximum(n - self.m, 0).astype(float)
        k = min(upto, self.m) + 1
        out[:k] = self.head[:k]
        return out

    def pmf(self, upto: int) -> np.ndarray:
        """P(N = n) for n = 0..upto."""
        F = self.tail_probs(upto + 1)
        return F[:-1] - F[1:]

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "p": self.p,
            "head": list(self.head),
            "tail_ratio": self.tail_ratio,
            "report": self.report,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomizationLaw":
        head = d["head"]
        if "m" in d and d["m"] != len(head) - 1:
            raise ValueError(f"m = {d['m']} does not match head length {len(head)}")
        return cls(head=tuple(head), tail_ratio=float(d["tail_ratio"]),
                   p=float(d.get("p", 1.0)), report=dict(d.get("report", {})))


@dataclass(frozen=True)
class SolverReport:
    adaptive_m: int
    blocks: PooledBlockList
    stop_ratio: float
    stop_ratio_ok: bool
    last_block_singleton: bool
    betas_used: tuple[float, ...]
    hit_m_max: bool = False
    tail_rule: str = "exact"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks.blocks]
        d["betas_used"] = list(self.betas_used)
        return d


def adaptive_solve(
    beta_source: Callable[[int], float] | Sequence[float],
    p: float = 1.0,
    epsilon: float = 0.5,
    m_max: int = 10,
    tail: str = "exact",
) -> tuple[RandomizationLaw, SolverReport]:
    """Adaptive infinite-horizon optimal law.

    ``beta_source(n)`` is called exactly once per index, in increasing order,
    and only as far as needed: beta_0 and beta_1 first, then one new index per
    iteration. The loop stops at the first m >= 1 where
    ``|beta_m / beta_{m+1} - 4**p| < epsilon`` and the last pooled block is the
    singleton {m}. ``tail="approx"`` replaces the fitted tail factor by
    2**(-(2p+1)/2).

    If m_max is reached first, the m_max-truncated head is returned with the
    approximate tail factor and ``report.hit_m_max`` is set.
    """
    if not p > 0.5:
        raise ValueError(f"p must exceed 1/2, got {p!r}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if m_max < 1:
        raise ValueError(f"m_max must be >= 1, got {m_max!r}")
    if tail not in ("exact", "approx"):
        raise ValueError(f"tail must be 'exact' or 'approx', got {tail!r}")
    if not callable(beta_source):
        seq = list(beta_source)
        beta_source = seq.__getitem__

    betas: list[float] = []

    def fetch(n):
        b = float(beta_source(n))
        if not b > 0:
            raise ValueError(f"beta[{n}] = {b!r} is not positive")
        betas.append(b)

    target = 4.0 ** p
    pool = _Pool(1.0)
    ratio, ratio_ok, singleton = float("nan"), False, False
    for m in range(m_max + 1):
        if m == 0:
            fetch(0)
        fetch(m + 1)
        pool.push(m, betas[m])
        if m == 0:
            continue
        ratio = betas[m] / betas[m + 1]
        ratio_ok = abs(ratio - target) < epsilon
        singleton = pool.stack[-1][0] == pool.stack[-1][1]
        if ratio_ok and singleton:
            rho = tail_ratio(betas[m], betas[m + 1]) if tail == "exact" else approx_tail_ratio(p)
            # a gate with 4**p - epsilon <= 2 can admit a divergent tail; keep going
            if 2.0 * rho < 1.0:
                return _finish(pool, m, betas, p, rho, ratio, ratio_ok, singleton, False, tail)
    return _finish(pool, m_max, betas, p, approx_tail_ratio(p), ratio, ratio_ok, singleton,
                   True, "approx")


def _finish(pool, m, betas, p, rho, ratio, ratio_ok, singleton, hit, tail):
    blocks = pool.blocks()
    steps = blocks.step_values()
    head = steps / steps[0]
    head[0] = 1.0
    report = SolverReport(
        adaptive_m=m,
        blocks=blocks,
        stop_ratio=ratio,
        stop_ratio_ok=ratio_ok,
        last_block_singleton=singleton,
        betas_used=tuple(betas),
        hit_m_max=hit,
        tail_rule=tail,
    )
    law = RandomizationLaw(tuple(head), rho, p, report={"mode": "adaptive", **report.to_dict()})
    return law, report


def truncated_law(beta: Sequence[float] | BetaSeries, m: int, p: float = 1.0) -> RandomizationLaw:
    """m-truncated optimal head continued by the approximate geometric tail."""
    F, blocks = solve_truncated(beta, m)
    if len(F) != m + 1:
        raise ValueError(f"need beta_0..beta_{m}, got {len(F)} values")
    return RandomizationLaw(tuple(F), approx_tail_ratio(p), p,
                            report={"mode": f"truncated:{m}",
                                    "blocks": [asdict(b) for b in blocks.blocks]})


def subcanonical(p: float = 1.0, m: int = 6) -> RandomizationLaw:
    """Baseline law F_n = 2**(-n(2p+1)/2); needs no level coefficients."""
    if not p > 0.5:
        raise ValueError(f"p must exceed 1/2, got {p!r}")
    rho = approx_tail_ratio(p)
    head = rho ** np.arange(m + 1, dtype=float)
    head[0] = 1.0
    return RandomizationLaw(tuple(head), rho, p, report={"mode": "subcanonical"})


def evaluate_objective(F: Sequence[float], beta: Sequence[float]) -> float:
    """g(F) = (sum beta_n / F_n) * (sum 2**n F_n)."""
    F = np.asarray(F, dtype=float)
    beta = np.asarray(beta.values if isinstance(beta, BetaSeries) else beta, dtype=float)
    if F.shape != beta.shape:
        raise ValueError(f"length mismatch: F has {F.size} entries, beta has {beta.size}")
    t = level_costs(F.size - 1)
    return float(np.sum(beta / F) * np.sum(t * F))


def expected_work(law: RandomizationLaw) -> float:
    """E(tau) = sum_n 2**n P(N >= n), with the geometric tail summed in closed form."""
    rho = law.tail_ratio
    if not 2.0 * rho < 1.0:
        raise ValueError(f"expected work diverges for tail_ratio {rho!r}")
    m = law.m
    head = np.asarray(law.head[:m])
    return float(np.sum(level_costs(m)[:m] * head) + law.head[m] * 2.0 ** m / (1.0 - 2.0 * rho))


@dataclass(frozen=True)
class L2Diagnostic:
    passed: bool
    ratio: float


def check_l2_condition(law: RandomizationLaw, p: float) -> L2Diagnostic:
    """Square-summability of E[(Y_n - Y)^2] / P(N >= n) when the gap decays as 4**(-p n).

    The tail terms are geometric with ratio 2**(-2p) / rho.
    """
    ratio = 2.0 ** (-2.0 * p) / law.tail_ratio
    return L2Diagnostic(ratio < 1.0, ratio)
