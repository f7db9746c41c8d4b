"""Experiment orchestration: prior estimation, solving, benchmarking, output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .estimators import BenchResult, run_batch, ESTIMATORS
from .samplers import ModelSpec, model_from_dict, model_to_dict, param_hash
from .solver import (
    BetaSeries,
    Provenance,
    RandomizationLaw,
    adaptive_solve,
    subcanonical,
    truncated_law,
)
from .variance import DEFAULT_FLOOR, DEFAULT_SAMPLES, estimate_betas

log = logging.getLogger(__name__)

CSV_HEADER = ["dist", "m", "n_samples", "mean", "var_of_mean", "wall_time_s",
              "mean_work", "var_x_time", "var_x_work"]
HEAD_WIDTH = 7


class ConfigError(ValueError):
    pass


class StaleCacheError(ValueError):
    pass


# --------------------------------------------------------------------------
# files


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    # json writes floats with repr, which round-trips exactly
    return json.dumps(obj, indent=2) + "\n"


def save_betas(path, betas: BetaSeries, spec: ModelSpec | None = None) -> None:
    prov = betas.provenance
    doc = {
        "model": spec.name if spec is not None else prov.model,
        "params": model_to_dict(spec)["params"] if spec is not None else {},
        "param_hash": param_hash(spec) if spec is not None else prov.param_hash,
        "kind": betas.kind,
        "proxy_level": prov.proxy_level,
        "samples": prov.samples,
        "seed": prov.seed,
        "mean_y": betas.mean_y,
        "v": list(betas.raw),
        "betas": list(betas.values),
        "clamp_warnings": list(prov.clamp_warnings),
    }
    atomic_write(path, _dump(doc))


def load_betas(path, spec: ModelSpec | None = None, kind: str | None = None) -> BetaSeries:
    """Read a beta cache; with ``spec``/``kind`` given, refuse a cache built for something else."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not valid JSON ({e})") from None
    for key in ("kind", "betas", "mean_y"):
        if key not in doc:
            raise ValueError(f"{path}: missing field {key!r}")
    if not isinstance(doc["betas"], list) or len(doc["betas"]) < 2:
        raise ValueError(f"{path}: field 'betas' needs at least 2 values")
    if spec is not None:
        want = param_hash(spec)
        if doc.get("param_hash") != want:
            raise StaleCacheError(
                f"{path}: field 'param_hash' is {doc.get('param_hash')!r}, model needs {want!r}")
    if kind is not None and doc["kind"] != kind:
        raise StaleCacheError(f"{path}: field 'kind' is {doc['kind']!r}, expected {kind!r}")
    prov = Provenance(doc.get("model", "unknown"), doc.get("param_hash", ""),
                      int(doc.get("proxy_level", 0)), int(doc.get("samples", 0)),
                      doc.get("seed"), tuple(doc.get("clamp_warnings", ())))
    return BetaSeries(tuple(doc["betas"]), float(doc["mean_y"]), doc["kind"], prov,
                      tuple(doc.get("v", ())))


def save_law(path, law: RandomizationLaw) -> None:
    atomic_write(path, _dump(law.to_dict()))


def load_law(path) -> RandomizationLaw:
    return RandomizationLaw.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# config


def _get(d: dict, key: str, path: str, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}{key}: required")
        return default
    return d[key]


def parse_distribution(text: str) -> tuple[str, int | None]:
    text = str(text).strip()
    if text in ("subcanonical", "adaptive"):
        return text, None
    if text.startswith("truncated:"):
        try:
            m = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad distribution {text!r}: truncation level must be an integer") from None
        if m < 0:
            raise ConfigError(f"bad distribution {text!r}: truncation level must be >= 0")
        return "truncated", m
    raise ConfigError(f"unknown distribution {text!r}; use subcanonical, truncated:<m> or adaptive")


@dataclass
class ExperimentConfig:
    model: ModelSpec
    seed: int
    distributions: list[str]
    estimator: str = "coupled"
    p: float = 1.0
    epsilon: float = 0.5
    m_max: int = 10
    prior_samples: int | None = None
    proxy_level: int = 10
    levels: int | None = None
    floor: float = DEFAULT_FLOOR
    cache: str | None = None
    bench_samples: int = 1_000_000
    workers: int = 1
    tail: str = "exact"

    def __post_init__(self):
        if not self.distributions:
            raise ConfigError("bench.distributions: at least one distribution required")
        for d in self.distributions:
            parse_distribution(d)
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator: must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not self.p > 0.5:
            raise ConfigError(f"solver.p: must exceed 1/2, got {self.p!r}")
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"solver.epsilon: must lie in (0, 1), got {self.epsilon!r}")
        if self.m_max < 1:
            raise ConfigError(f"solver.m_max: must be >= 1, got {self.m_max!r}")
        if self.bench_samples < 1:
            raise ConfigError(f"bench.samples: must be >= 1, got {self.bench_samples!r}")
        if self.levels is None:
            self.levels = self.proxy_level - 1
        if not 1 <= self.levels < self.proxy_level:
            raise ConfigError(f"prior.levels: must lie in [1, proxy_level), got {self.levels!r}")
        if self.prior_samples is None:
            self.prior_samples = DEFAULT_SAMPLES[self.estimator]

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: expected a mapping at top level")
        seed = _get(doc, "seed", "", required=True)
        model_doc = _get(doc, "model", "", required=True)
        name = _get(model_doc, "name", "model.", required=True)
        try:
            model = model_from_dict(name, _get(model_doc, "params", "model.", {}))
        except (ValueError, TypeError) as e:
            raise ConfigError(f"model.params: {e}") from None
        solver = doc.get("solver", {}) or {}
        prior = doc.get("prior", {}) or {}
        bench = doc.get("bench", {}) or {}
        dists = _get(bench, "distributions", "bench.", [])
        try:
            return cls(
                model=model,
                seed=int(seed),
                distributions=[str(d) for d in dists],
                estimator=str(doc.get("estimator", "coupled")),
                p=float(solver.get("p", 1.0)),
                epsilon=float(solver.get("epsilon", 0.5)),
                m_max=int(solver.get("m_max", 10)),
                tail=str(solver.get("tail", "exact")),
                prior_samples=None if prior.get("samples") is None else int(prior["samples"]),
                proxy_level=int(prior.get("proxy_level", 10)),
                levels=None if prior.get("levels") is None else int(prior["levels"]),
                floor=float(prior.get("floor", DEFAULT_FLOOR)),
                cache=prior.get("cache"),
                bench_samples=int(bench.get("samples", 1_000_000)),
                workers=int(doc.get("workers", 1)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"config: {e}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def needs_betas(self) -> bool:
        return any(parse_distribution(d)[0] != "subcanonical" for d in self.distributions)


# --------------------------------------------------------------------------
# experiment


@dataclass
class Row:
    dist: str
    m: int | None
    law: RandomizationLaw
    result: BenchResult


@dataclass
class ExperimentResult:
    model: dict
    estimator: str
    rows: list[Row]
    betas: BetaSeries | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "estimator": self.estimator,
            "betas": list(self.betas.values) if self.betas else None,
            "mean_y": self.betas.mean_y if self.betas else None,
            "rows": [{"dist": r.dist, "m": r.m, "law": r.law.to_dict(), "result": r.result.to_dict()}
                     for r in self.rows],
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        betas = None
        if d.get("betas"):
            betas = BetaSeries(tuple(d["betas"]), d.get("mean_y") or float("nan"))
        rows = []
        for r in d["rows"]:
            res = dict(r["result"])
            res["level_counts"] = tuple(res.get("level_counts", ()))
            rows.append(Row(r["dist"], r["m"], RandomizationLaw.from_dict(r["law"]), BenchResult(**res)))
        return cls(d["model"], d["estimator"], rows, betas, list(d.get("notes", [])))


def obtain_betas(config: ExperimentConfig) -> BetaSeries:
    """Load the cached betas when they match the model, else estimate (and cache)."""
    if config.cache and Path(config.cache).exists():
        betas = load_betas(config.cache, config.model, config.estimator)
        if len(betas) < config.levels + 1:
            raise StaleCacheError(
                f"{config.cache}: field 'betas' has {len(betas)} values, need {config.levels + 1}")
        log.info("using cached betas from %s", config.cache)
        return betas
    betas = estimate_betas(config.model, config.estimator, config.levels, config.proxy_level,
                           config.prior_samples, config.seed, config.floor, config.workers)
    if config.cache:
        save_betas(config.cache, betas, config.model)
    return betas


def solve_distribution(text: str, betas: BetaSeries | None, p: float, epsilon: float = 0.5,
                       m_max: int = 10, tail: str = "exact") -> tuple[RandomizationLaw, list[str]]:
    kind, m = parse_distribution(text)
    notes = []
    if kind == "subcanonical":
        return subcanonical(p, HEAD_WIDTH - 1), notes
    if betas is None:
        raise ConfigError(f"distribution {text!r} needs level coefficients")
    if kind == "truncated":
        if m + 1 > len(betas):
            raise ConfigError(f"distribution {text!r} needs beta_0..beta_{m}, have {len(betas)} values")
        return truncated_law(betas, m, p), notes
    usable = min(m_max, len(betas) - 2)
    if usable < m_max:
        notes.append(f"adaptive m_max lowered from {m_max} to {usable}: only {len(betas)} betas available")
    law, report = adaptive_solve(betas.values, p, epsilon, usable, tail)
    if report.hit_m_max:
        notes.append(f"adaptive search reached m_max={usable} without meeting the stopping rule")
    return law, notes


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    betas = obtain_betas(config) if config.needs_betas() else None
    rows, notes = [], []
    for text in config.distributions:
        law, more = solve_distribution(text, betas, config.p, config.epsilon, config.m_max, config.tail)
        notes += more
        # re-validate what will be emitted
        law = RandomizationLaw.from_dict(law.to_dict())
        kind, m = parse_distribution(text)
        m_shown = None if kind == "subcanonical" else law.m
        log.info("running %s (m=%s), %d samples", text, m_shown, config.bench_samples)
        res = run_batch(config.estimator, law, config.model, config.bench_samples, config.seed, config.workers)
        rows.append(Row(text, m_shown, law, res))
    for n in notes:
        log.warning(n)
    result = ExperimentResult(model_to_dict(config.model), config.estimator, rows, betas, notes)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


# --------------------------------------------------------------------------
# output


def _g(x) -> str:
    return format(x, ".17g")


def results_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.rows:
        b = r.result
        w.writerow([r.dist, "" if r.m is None else r.m, b.n_samples, _g(b.mean), _g(b.variance_of_mean),
                    _g(b.wall_time_s), _g(b.mean_work_units), _g(b.var_time_product), _g(b.var_work_product)])
    return buf.getvalue()


def write_outputs(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    atomic_write(out / "results.csv", results_csv(result))
    atomic_write(out / "results.json", _dump(result.to_dict()))
    for r in result.rows:
        save_law(out / f"dist_{r.dist.replace(':', '_')}.json", r.law)
    if result.betas is not None:
        atomic_write(out / "betas.json", _dump({"betas": list(result.betas.values),
                                                 "mean_y": result.betas.mean_y,
                                                 "kind": result.betas.kind}))


def _sci(x: float) -> str:
    return f"{x:.3g}" if math.isfinite(x) else "nan"


def render_table(result: ExperimentResult) -> str:
    lines = [f"model {result.model['model']}  estimator {result.estimator}"]
    width = max([len(r.dist) for r in result.rows] + [6])
    lines.append(f"{'dist':<{width}}  {'m':>3}  {'mean':>10}  {'var':>10}  {'time':>8}  "
                 f"{'work':>8}  {'var*time':>10}  {'var*work':>10}")
    for r in result.rows:
        b = r.result
        m = "-" if r.m is None else str(r.m)
        lines.append(f"{r.dist:<{width}}  {m:>3}  {b.mean:>10.6f}  {_sci(b.variance_of_mean):>10}  "
                     f"{b.wall_time_s:>8.2f}  {b.mean_work_units:>8.3f}  {_sci(b.var_time_product):>10}  "
                     f"{_sci(b.var_work_product):>10}")
    lines.append("")
    lines.append(f"{'n':<{width}}  " + "  ".join(f"{n:>9}" for n in range(HEAD_WIDTH)))
    if result.betas is not None:
        vals = list(result.betas.values[:HEAD_WIDTH])
        lines.append(f"{'beta':<{width}}  " + "  ".join(f"{_sci(v):>9}" for v in vals))
    for r in result.rows:
        F = r.law.tail_probs(HEAD_WIDTH - 1)
        lines.append(f"{r.dist:<{width}}  " + "  ".join(f"{f:>9.4f}" for f in F))
    for n in result.notes:
        lines.append(f"note: {n}")
    return "\n".join(lines)
