"""Seeded experiments, grid searches and the conditioning sweep, with CSV output.

Trace files have the fixed header ``pass,seconds,loss,grad_norm,delta``.
``pass`` counts full passes of stochastic steps over the data (not outer
iterations).  Reals are written with ``repr`` so they round-trip exactly.
A run that diverges ends with a row whose loss and grad_norm are ``inf``;
its status is recorded in the manifest.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .objectives import (
    Dataset, Objective, load_csv, load_idx, make_classification, make_conditioned_regression,
    make_regression, quantize_dataset,
)
from .optimizers import DivergenceError, OptimizerConfig, RunRecord, run

TRACE_COLUMNS = ("pass", "seconds", "loss", "grad_norm", "delta")
SWEEP_COLUMNS = ("kappa", "algorithm", "bits", "alpha", "mu", "grad_norm", "diverged")

GENERATORS = {
    "regression": make_regression,
    "classification": make_classification,
    "conditioned": make_conditioned_regression,
}


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce a set of traces.

    ``dataset`` is either ``{"generator": name, **kwargs}`` or a file entry
    ``{"csv": path, "n_classes": C}`` / ``{"idx_images": path, "idx_labels": path}``.
    ``data_bits`` quantizes the examples (required by LM-HALP).
    ``metric_every`` thins measurements to roughly every k passes.
    """

    dataset: dict
    configs: list
    loss: str = "squared"
    l2: float = 0.0
    seeds: list = field(default_factory=lambda: [0])
    metric_every: float | None = None
    data_bits: int | None = None
    output: str | None = None

    def __post_init__(self):
        self.configs = [c if isinstance(c, OptimizerConfig) else OptimizerConfig(**c)
                        for c in self.configs]
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        if not self.configs:
            raise ValueError("an experiment needs at least one optimizer config")
        if len(self.seeds) < 1:
            raise ValueError("an experiment needs at least one seed")

    def to_dict(self):
        d = asdict(self)
        d["configs"] = [c.to_dict() for c in self.configs]
        return d

    @classmethod
    def from_dict(cls, d):
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in keys})

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_dict(d.get("spec", d))


@dataclass
class GridSpec:
    params: dict
    metric: str = "grad_norm"

    def __post_init__(self):
        if not self.params or any(len(v) == 0 for v in self.params.values()):
            raise ValueError("grid must be non-empty in every parameter")
        if self.metric not in ("grad_norm", "loss"):
            raise ValueError("metric must be 'grad_norm' or 'loss'")

    def points(self):
        names = sorted(self.params)
        for combo in itertools.product(*(self.params[n] for n in names)):
            yield dict(zip(names, combo))

    def __len__(self):
        return math.prod(len(v) for v in self.params.values())


def comparison_spec(epochs: int = 25, seeds=(0,), output: str | None = None) -> ExperimentSpec:
    """The 1000 x 100 regression comparison: SGD and SVRG at 64, 16 and 8 bits, plus HALP.

    Inner length 2000 (two passes), so ``epochs=25`` is 50 passes.
    """
    sgd, svrg = 2.5e-6, 5e-3
    configs = []
    for algo, alpha in (("sgd", sgd), ("svrg", svrg)):
        configs.append(OptimizerConfig(algo, alpha=alpha, epochs=epochs, inner=2000))
        for bits, delta in ((8, 0.7), (16, 0.003)):
            configs.append(OptimizerConfig(f"lp-{algo}", alpha=alpha, epochs=epochs, inner=2000,
                                           bits=bits, delta=delta))
    for bits in (8, 16):
        configs.append(OptimizerConfig("halp", alpha=svrg, epochs=epochs, inner=2000, bits=bits,
                                       mu=3.0))
    return ExperimentSpec({"generator": "regression", "n": 1000, "d": 100, "seed": 0}, configs,
                          seeds=list(seeds), output=output)


def build_dataset(entry: dict) -> Dataset:
    entry = dict(entry)
    if "generator" in entry:
        name = entry.pop("generator")
        if name not in GENERATORS:
            raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
        return GENERATORS[name](**entry)
    if "csv" in entry:
        return load_csv(entry["csv"], n_classes=entry.get("n_classes", 0))
    if "idx_images" in entry:
        return load_idx(entry["idx_images"], entry.get("idx_labels"))
    raise ValueError(f"cannot interpret dataset entry {entry!r}")


def build_objective(spec: ExperimentSpec) -> Objective:
    ds = build_dataset(spec.dataset)
    if spec.data_bits:
        ds = quantize_dataset(ds, spec.data_bits)
    mu = 1.0 if ds.info.get("generator") == "conditioned" else None
    return Objective(ds, spec.loss, spec.l2, mu=mu)


def _fmt(x):
    return repr(float(x))


def trace_csv(rec: RunRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in rec.rows:
        w.writerow([_fmt(r.passes), _fmt(r.seconds), _fmt(r.loss), _fmt(r.grad_norm), _fmt(r.delta)])
    if rec.status == "diverged":
        last = rec.rows[-1] if rec.rows else None
        w.writerow([_fmt(last.passes if last else 0.0), _fmt(last.seconds if last else 0.0),
                    "inf", "inf", "nan"])
    return buf.getvalue()


def read_trace(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, 5)
    return {name: data[:, j] for j, name in enumerate(TRACE_COLUMNS)}


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_label(cfg: OptimizerConfig) -> str:
    if cfg.algorithm in ("sgd", "svrg"):
        return f"{cfg.algorithm}-64"
    return f"{cfg.algorithm}-{cfg.bits}"


def _measure_every(spec, cfg, N):
    if not spec.metric_every:
        return cfg.measure_every
    T = cfg.inner_length(N)
    return max(1, round(spec.metric_every * N / T)) if T else 1


def _execute(obj, cfg):
    try:
        # divergent grid points overflow on the way to the divergence check
        with np.errstate(over="ignore", invalid="ignore"):
            return run(obj, cfg)
    except DivergenceError as exc:
        return exc.record


def run_experiment(spec: ExperimentSpec, obj: Objective | None = None) -> dict:
    """Run every (config, seed) pair; write one trace CSV each plus ``manifest.json``.

    Returns the manifest as a dict (with records attached under ``"records"``
    when no output directory is set).
    """
    if obj is None:
        obj = build_objective(spec)
    out = Path(spec.output) if spec.output else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory {out} is not writable")
    runs, records = [], []
    for ci, base in enumerate(spec.configs):
        for seed in spec.seeds:
            cfg = replace(base, seed=seed, measure_every=_measure_every(spec, base, obj.N))
            rec = _execute(obj, cfg)
            name = f"{ci:02d}_{run_label(cfg)}_seed{seed}.csv"
            text = trace_csv(rec)
            if out is not None:
                atomic_write(out / name, text)
            records.append(rec)
            runs.append({"file": name, "config": ci, "label": run_label(cfg), "seed": seed,
                         "status": rec.status,
                         "final_grad_norm": rec.rows[-1].grad_norm if rec.rows else None,
                         "final_digest": rec.rows[-1].digest if rec.rows else None})
    manifest = {"version": __version__, "spec": spec.to_dict(), "runs": runs}
    if out is not None:
        atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, default=_json_default))
    manifest["records"] = records
    return manifest


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _final_metric(rec: RunRecord, metric: str) -> float:
    if rec.status == "diverged" or not rec.rows:
        return math.inf
    v = getattr(rec.rows[-1], metric)
    return v if math.isfinite(v) else math.inf


@dataclass
class GridResult:
    best: OptimizerConfig
    best_score: float
    table: list


def grid_search(spec: ExperimentSpec, grid: GridSpec, obj: Objective | None = None) -> GridResult:
    """Evaluate every grid point on every seed; pick the lowest seed-averaged final metric.

    Points are enumerated in lexicographic parameter order and ties go to
    the earlier point.  Divergent runs score ``inf``.
    """
    if obj is None:
        obj = build_objective(spec)
    base = spec.configs[0]
    table = []
    best, best_score = None, math.inf
    for point in grid.points():
        cfg0 = replace(base, **point)
        scores = []
        for seed in spec.seeds:
            rec = _execute(obj, replace(cfg0, seed=seed))
            s = _final_metric(rec, grid.metric)
            scores.append(s)
            table.append({**point, "seed": seed, grid.metric: s, "status": rec.status})
        mean = float(np.mean(scores))
        if best is None or mean < best_score:
            best, best_score = cfg0, mean
    if spec.output:
        names = sorted(grid.params)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names + ["seed", grid.metric, "status"])
        for row in table:
            w.writerow([_fmt(row[n]) if isinstance(row[n], float) else row[n] for n in names]
                       + [row["seed"], _fmt(row[grid.metric]), row["status"]])
        atomic_write(Path(spec.output) / "grid.csv", buf.getvalue())
        atomic_write(Path(spec.output) / "grid_best.json",
                     json.dumps({"best": best.to_dict(), "score": best_score}, indent=2,
                                default=_json_default))
    return GridResult(best, best_score, table)


DEFAULT_SWEEP_ALPHAS = tuple(np.logspace(-2, -10, 25))
DEFAULT_SWEEP_MUS = tuple(np.geomspace(0.5, 2000, 9))


def conditioning_sweep(kappas, bits_list=(16, 8), seed: int = 0, inner: int = 1000,
                       epochs: int = 50, alphas=DEFAULT_SWEEP_ALPHAS, mus=DEFAULT_SWEEP_MUS,
                       output=None, n: int = 1000, d: int = 64) -> list:
    """Best final gradient norm of SVRG and HALP at each bit width, per condition number.

    Step sizes (and mu for HALP) are grid-searched per problem.  Rows with no
    non-divergent setting carry ``diverged=True`` and ``grad_norm=inf``.
    """
    rows = []
    for kappa in kappas:
        obj = Objective(make_conditioned_regression(kappa, seed=seed, n=n, d=d), mu=1.0)
        plans = [("svrg", 64, [None])] + [("halp", b, list(mus)) for b in bits_list]
        for algo, bits, mu_grid in plans:
            best = (math.inf, None, None)
            for alpha in alphas:
                for mu in mu_grid:
                    cfg = OptimizerConfig(algo, alpha=float(alpha), epochs=epochs, inner=inner,
                                          bits=bits if algo == "halp" else 8,
                                          mu=None if mu is None else float(mu), seed=seed)
                    g = _final_metric(_execute(obj, cfg), "grad_norm")
                    if g < best[0]:
                        best = (g, float(alpha), mu)
            rows.append({"kappa": float(kappa), "algorithm": algo, "bits": bits,
                         "alpha": best[1] if best[1] is not None else math.nan,
                         "mu": best[2] if best[2] is not None else math.nan,
                         "grad_norm": best[0], "diverged": not math.isfinite(best[0])})
    if output:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r["kappa"]), r["algorithm"], r["bits"], _fmt(r["alpha"]),
                        _fmt(r["mu"]), _fmt(r["grad_norm"]), int(r["diverged"])])
        atomic_write(output, buf.getvalue())
    return rows


def degradation_threshold(rows, bits: int, factor: float = 10.0) -> float:
    """Least kappa where HALP at ``bits`` ends ``factor`` times above SVRG (inf if none)."""
    svrg = {r["kappa"]: r["grad_norm"] for r in rows if r["algorithm"] == "svrg"}
    halp = {r["kappa"]: r["grad_norm"] for r in rows
            if r["algorithm"] == "halp" and r["bits"] == bits}
    for kappa in sorted(halp):
        if halp[kappa] >= factor * svrg[kappa]:
            return kappa
    return math.inf
