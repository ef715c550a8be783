"""Experiment configuration, seeded multi-trial runs, CSV persistence and charts."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .driver import CSV_COLUMNS, Diagnostics, RunRecord, Schedule, high_fidelity_direction, run
from .ghost import ConfigError, GhostConfig, solve_direction
from .mlmc import LEVEL_CAP, estimator_moments, expected_work
from .problem import StochasticProblem
from .testbed import NetSpec, SyntheticSpec, load_idx, make_problem, synthetic_blobs

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GHOSTSA_OUTPUT_ROOT"
SUMMARY_COLUMNS = ("gamma", "obj_est", "cons_max_est", "kappa", "theta", "d_tilde_norm", "d_hi_norm",
                   "W_eps", "level", "samples_used")
CHART_COLUMNS = ("obj_est", "cons_max_est", "W_eps", "theta", "kappa", "d_tilde_norm", "d_hi_norm")
SYNTHETIC_KINDS = ("quadratic_affine", "finite_support", "circle_toy")
BENCH_P_VALUES = (0.05, 0.1, 0.2, 0.4, 0.7, 0.9)


@dataclass(frozen=True)
class ProblemConfig:
    kind: str
    noise: float = 0.1
    n: int = 2
    m: int = 1
    seed: int = 0
    violation: float = 0.5
    # neural network problems
    input_dim: int = 100
    hidden: int = 50
    experiment: str = "ellipsoid"
    a_w: float = 2.0
    a_b: float = 1.0
    c_level: float = 5.0
    digit: int = 2
    constraint_digit: int = 4
    threshold: Optional[float] = None
    eval_rows: int = 1000
    init_scale: float = 1.0
    data: str = "synthetic"  # "synthetic" or a path to an IDX images file
    data_rows: int = 4000
    validation_fraction: float = 0.2


@dataclass(frozen=True)
class BenchConfig:
    p_values: tuple = BENCH_P_VALUES
    draws: int = 2000
    points: int = 3
    level_cap: int = LEVEL_CAP
    point_radius: float = 1.0
    reference_samples: int = 1 << 16


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    iterations: int
    ghost: GhostConfig = GhostConfig()
    schedule: Schedule = Schedule()
    diagnostics: Diagnostics = Diagnostics()
    bench: BenchConfig = BenchConfig()
    p_geo: float = 0.7
    trials: int = 21
    seed: int = 0
    loss: str = "squared"
    output_dir: str = "run"
    workers: int = 1
    x1: Optional[tuple] = None
    log_scale: tuple = ("d_hi_norm",)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"invariant violated: trials >= 1 (trials={self.trials})")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be nonnegative, got {self.iterations}")
        if not 0 < self.p_geo < 1:
            raise ConfigError(f"invariant violated: 0 < p_geo < 1 (p_geo={self.p_geo})")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.loss not in ("squared", "signed"):
            raise ConfigError(f"loss must be 'squared' or 'signed', got {self.loss!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["ghost"]["lambda"] = out["ghost"].pop("lam")
        return out


# ---------------------------------------------------------------- parsing

_SECTIONS = {
    "problem": ProblemConfig,
    "ghost": GhostConfig,
    "schedule": Schedule,
    "diagnostics": Diagnostics,
    "bench": BenchConfig,
}
_RENAMES = {"ghost": {"lambda": "lam"}}
_REQUIRED = {"": ("iterations",), "problem": ("kind",)}
_TUPLES = {("", "x1"), ("", "log_scale"), ("bench", "p_values")}


def _build(cls, table: dict, section: str, extra: Optional[dict] = None):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    renames = _RENAMES.get(section, {})
    kwargs = {}
    for key, value in table.items():
        name = renames.get(key, key)
        if name not in names or name in _SECTIONS:
            where = f"[{section}]" if section else "top level"
            raise ConfigError(f"unknown config key {key!r} at {where}")
        if (section, name) in _TUPLES and value is not None:
            value = tuple(value)
        kwargs[name] = value
    for key in _REQUIRED.get(section, ()):
        if key not in kwargs:
            raise ConfigError(f"missing required config key {(section + '.' if section else '') + key!r}")
    kwargs.update(extra or {})
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"bad value in [{section or 'top level'}]: {err}") from None


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config is not valid TOML: {err}") from None
    sections = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            sections[name] = _build(cls, raw.pop(name), name)
    if "problem" not in sections:
        raise ConfigError("missing required config key 'problem.kind'")
    cfg = _build(RunConfig, raw, "", sections)
    _validate_problem(cfg)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def _validate_problem(cfg: RunConfig) -> None:
    kind = cfg.problem.kind
    if kind not in SYNTHETIC_KINDS + ("neural",):
        raise ConfigError(f"problem.kind must be one of {SYNTHETIC_KINDS + ('neural',)}, got {kind!r}")
    if kind == "neural":
        net_spec(cfg).validate()
    if cfg.p_geo <= 0.5:
        log.warning("p_geo=%g <= 0.5: expected samples per estimator draw is infinite", cfg.p_geo)


def net_spec(cfg: RunConfig) -> NetSpec:
    p = cfg.problem
    try:
        spec = NetSpec(p.input_dim, p.hidden, p.experiment, p.a_w, p.a_b, p.c_level, p.digit,
                       p.constraint_digit, p.threshold, cfg.loss, p.eval_rows, p.init_scale)
        spec.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return spec


def build_problem(cfg: RunConfig) -> StochasticProblem:
    p = cfg.problem
    if p.kind in SYNTHETIC_KINDS:
        return make_problem(SyntheticSpec(p.kind, p.n, p.m, p.noise, p.seed, p.violation))
    if p.data == "synthetic":
        data = synthetic_blobs(p.input_dim, p.data_rows, seed=p.seed,
                               validation_fraction=p.validation_fraction)
    else:
        data = load_idx(p.data, input_dim=p.input_dim, validation_fraction=p.validation_fraction)
    return make_problem(net_spec(cfg), data)


# ---------------------------------------------------------------- trials


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based per-trial stream: depends only on (seed, trial)."""
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


@dataclass
class TrialSet:
    records: list  # RunRecord per trial
    config: RunConfig
    seeds: list  # (seed, trial) entropy per trial
    excluded: list = field(default_factory=list)  # trial indices that aborted

    @property
    def included(self) -> list:
        return [t for t in range(len(self.records)) if t not in self.excluded]


def _run_one(args) -> RunRecord:
    cfg, trial = args
    problem = build_problem(cfg)
    x1 = None if cfg.x1 is None else np.asarray(cfg.x1, dtype=float)
    return run(problem, cfg.ghost, cfg.schedule, cfg.p_geo, cfg.iterations, cfg.diagnostics, x1,
               trial_rng(cfg.seed, trial))


def run_trials(cfg: RunConfig, workers: Optional[int] = None) -> TrialSet:
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(job) for job in jobs]
    excluded = [t for t, r in enumerate(records) if r.status != "completed"]
    for t in excluded:
        log.warning("trial %d aborted (%s); excluded from aggregation", t, records[t].failures[-1][1])
    return TrialSet(records, cfg, [[cfg.seed, t] for t in range(cfg.trials)], excluded)


def aggregate_quantiles(ts: TrialSet, column: str, iter: int) -> tuple[float, float, float]:
    """(q25, median, q75) over included trials, linear interpolation between order statistics."""
    values = [ts.records[t].columns[column][iter] for t in ts.included
              if iter < ts.records[t].rows]
    if not values:
        raise ValueError("no included trials to aggregate")
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return (float("nan"),) * 3
    q25, med, q75 = np.quantile(values, [0.25, 0.5, 0.75], method="linear")
    return float(q25), float(med), float(q75)


# ---------------------------------------------------------------- outputs


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def resolve_output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    return out if out.is_absolute() else output_root() / out


INTEGER_COLUMNS = ("iter", "level", "samples_used")


def _fmt(value, integer: bool = False) -> str:
    value = float(value)
    if np.isnan(value):
        return ""
    return str(int(value)) if integer else repr(value)


def trials_csv(ts: TrialSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("trial",) + CSV_COLUMNS)
    for t, record in enumerate(ts.records):
        cols = [(record.columns[name], name in INTEGER_COLUMNS) for name in CSV_COLUMNS]
        for i in range(record.rows):
            writer.writerow([t] + [_fmt(col[i], integer) for col, integer in cols])
    return buf.getvalue()


def summary_csv(ts: TrialSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["iter", "trials"]
    for name in SUMMARY_COLUMNS:
        header += [f"{name}_q25", f"{name}_median", f"{name}_q75"]
    writer.writerow(header)
    rows = max(ts.records[t].rows for t in ts.included)
    for i in range(rows):
        count = sum(1 for t in ts.included if i < ts.records[t].rows)
        line = [str(i), str(count)]
        for name in SUMMARY_COLUMNS:
            line += [_fmt(v) for v in aggregate_quantiles(ts, name, i)]
        writer.writerow(line)
    return buf.getvalue()


def _chart(ts: TrialSet, column: str, path: Path, log_scale: bool) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = max(ts.records[t].rows for t in ts.included)
    stats = np.array([aggregate_quantiles(ts, column, i) for i in range(rows)])
    iters = np.arange(rows)
    keep = np.all(np.isfinite(stats), axis=1)
    if log_scale:
        keep &= np.all(stats > 0, axis=1)
    iters, stats = iters[keep], stats[keep]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(iters, stats[:, 0], stats[:, 2], alpha=0.3, color="tab:blue", lw=0, gid="iqr")
    ax.plot(iters, stats[:, 1], color="tab:blue", lw=1.5, label="median", gid="median")
    ax.plot(iters, stats[:, 0], color="tab:blue", lw=0.5, ls="--", label="q25", gid="q25")
    ax.plot(iters, stats[:, 2], color="tab:blue", lw=0.5, ls="--", label="q75", gid="q75")
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(column)
    ax.set_title(f"{column}: median and interquartile range over {len(ts.included)} trials")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_outputs(ts: TrialSet, out_dir, charts: bool = True) -> dict:
    """Write trials.csv, summary.csv, one SVG chart per monitored column and config.json."""
    if not ts.records:
        raise ValueError("cannot emit outputs for an empty trial set")
    if not ts.included:
        raise ValueError("every trial aborted; nothing to aggregate")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {}
    path = out / "trials.csv"
    path.write_text(trials_csv(ts))
    manifest["trials"] = str(path)
    path = out / "summary.csv"
    path.write_text(summary_csv(ts))
    manifest["summary"] = str(path)
    if charts:
        import matplotlib

        matplotlib.rcParams["svg.hashsalt"] = "ghostsa"
        for column in CHART_COLUMNS:
            path = out / f"{column}.svg"
            _chart(ts, column, path, column in ts.config.log_scale)
            manifest[f"chart_{column}"] = str(path)
    path = out / "config.json"
    echo = {"config": ts.config.to_dict(), "trial_seeds": ts.seeds, "excluded_trials": ts.excluded,
            "statuses": [r.status for r in ts.records]}
    path.write_text(json.dumps(echo, indent=2, sort_keys=True, default=_json_default) + "\n")
    manifest["config"] = str(path)
    return manifest


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


# ---------------------------------------------------------------- estimator sweep

BENCH_COLUMNS = ("estimator", "p_geo", "point", "reference", "bias_norm", "max_bias_z", "cov_trace",
                 "work_mean", "expected_work", "draws", "redraws")


def bench_estimator(cfg: RunConfig, workers: Optional[int] = None) -> list[dict]:
    """Bias, variance and work of the multilevel estimator over the p_geo sweep.

    The reference direction is exact when the problem has an exact oracle and a
    large-batch sample-average solve otherwise.  The one-sample plug-in
    estimator is included as a baseline.
    """
    workers = cfg.workers if workers is None else workers
    bench = cfg.bench
    problem = build_problem(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xBE4C]))
    base = problem.initial_point(rng)
    points = [base + rng.uniform(-bench.point_radius, bench.point_radius, size=problem.dim)
              for _ in range(bench.points)]
    rows = []
    for k, x in enumerate(points):
        if problem.has_exact:
            ref, ref_kind = solve_direction(problem.exact(x).as_data(), cfg.ghost).d, "exact"
        else:
            ref = high_fidelity_direction(problem, x, bench.reference_samples, cfg.ghost, rng)
            ref_kind = f"saa{bench.reference_samples}"
        runs = [("naive", None)] + [("mlmc", p) for p in bench.p_values]
        for estimator, p in runs:
            m = estimator_moments(problem, x, cfg.ghost, p if p is not None else 0.5, bench.draws, rng,
                                  estimator=estimator, workers=workers, level_cap=bench.level_cap)
            bias = m.mean - ref
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(m.std_err > 0, np.abs(bias) / m.std_err, np.where(bias == 0, 0.0, np.inf))
            rows.append({
                "estimator": estimator,
                "p_geo": "" if p is None else p,
                "point": k,
                "reference": ref_kind,
                "bias_norm": float(np.linalg.norm(bias)),
                "max_bias_z": float(np.max(z)),
                "cov_trace": m.cov_trace,
                "work_mean": m.work_mean,
                "expected_work": 1.0 if p is None else expected_work(p),
                "draws": m.draws,
                "redraws": m.redraws,
            })
    return rows


def bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BENCH_COLUMNS)
    for row in rows:
        writer.writerow([row[c] if isinstance(row[c], str) else _fmt(row[c], c in ("point", "draws", "redraws"))
                         for c in BENCH_COLUMNS])
    return buf.getvalue()
