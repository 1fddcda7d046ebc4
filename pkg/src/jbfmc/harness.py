"""End-to-end trials and Monte-Carlo sweeps of the two-stage estimator.

A trial draws one channel/pilot/noise realization, factorizes Y into
(G, Z) with BiG-AMP, completes Z with the selected method, recovers H by
least squares against the pilots, and scores everything with the
ambiguity-aligned NMSE. Sweeps repeat trials over a grid of scenario
values and aggregate them into one CSV row per (method, grid point).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bigamp, completion
from .config import PipelineOptions, config_from_mapping, read_key_values
from .evaluation import TrialResult, evaluate_trial, to_db
from .model import (ConfigError, SystemConfig, TrialStreams, draw_channels, draw_pilots,
                    snr_db_to_noise_power, synthesize)

logger = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "CSV_HEADER",
    "prior_variances",
    "estimate_channels",
    "run_trial",
    "run_trial_methods",
    "trial_seed",
    "SweepSpec",
    "SweepRow",
    "SweepResult",
    "load_sweep_spec",
    "run_sweep",
    "emit_csv",
    "read_csv",
    "emit_plot",
]

METHODS = {
    "jbf-mc": completion.run_rgrad,
    "jbf-iht": completion.run_iht,
    "jbf-ist": completion.run_ist,
}

CSV_HEADER = ("method", "axis1_name", "axis1", "axis2_name", "axis2",
              "nmse_g_db", "nmse_h_db", "fail_rate", "iters", "wall_ms")

_AXIS_NAMES = {"snr_db", "noise_power", "sparsity_level", "pilot_length", "num_surface_elements",
               "num_bs_antennas", "num_rx_antennas", "num_paths_h", "num_paths_g",
               "completion_rank"}


def prior_variances(config: SystemConfig) -> tuple[float, float]:
    """Per-entry second moments of G and of the nonzero entries of Z.

    Every steering term has unit-modulus entries and a CN(0, 1) gain, so
    E|G_ln|^2 = K_g and E|H_nm|^2 = K_h. With CN(0, 1) pilots,
    E|(H X)_nt|^2 = M K_h.
    """
    return float(config.num_paths_g), float(config.M * config.num_paths_h)


def estimate_channels(Y, S, X, config: SystemConfig, methods=("jbf-mc",),
                      options: PipelineOptions = None, rng=None) -> dict:
    """Run the factorization once and every requested completion method on its output.

    Returns ``{"factorization": FactorizationResult, "bigamp_ms": float,
    method: {"A", "H", "completion", "ms"} or {"error": str}}``.
    """
    options = options or PipelineOptions()
    support = np.asarray(S) != 0
    nu_g, nu_z = prior_variances(config)
    out = {}
    t0 = time.perf_counter()
    if not support.any():
        out["factorization"] = None
        out["bigamp_ms"] = 0.0
        for m in methods:
            out[m] = {"error": "empty surface on/off pattern"}
        return out
    priors = bigamp.Priors(nu_g=nu_g, nu_z=nu_z, noise_var=config.noise_power,
                           support=support, sparsity_level=config.sparsity_level)
    fact = bigamp.run(Y, priors, options.bigamp(), rng)
    out["factorization"] = fact
    out["bigamp_ms"] = 1e3 * (time.perf_counter() - t0)
    for m in methods:
        t1 = time.perf_counter()
        if fact.failed:
            out[m] = {"error": "factorization diverged in every restart"}
            continue
        try:
            problem = completion.CompletionProblem(observed=fact.Z, mask=S, rank=config.completion_rank)
            comp = METHODS[m](problem, options.completion())
            H = completion.recover_H(comp.A, X)
        except np.linalg.LinAlgError as exc:
            out[m] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        out[m] = {"A": comp.A, "H": H, "completion": comp, "ms": 1e3 * (time.perf_counter() - t1)}
    return out


def run_trial_methods(config: SystemConfig, methods, seed: int,
                      options: PipelineOptions = None, keep_estimates: bool = False) -> list[TrialResult]:
    """One realization, scored for each method. Deterministic in (config, methods, seed, options)."""
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
    streams = TrialStreams(seed)
    channels = draw_channels(config, streams.channels)
    pilots = draw_pilots(config, streams.pilots)
    obs = synthesize(channels, pilots, config.noise_power, streams.noise)
    est = estimate_channels(obs.Y, pilots.S, pilots.X, config, methods, options, streams.algorithm)
    fact = est["factorization"]
    results = []
    for m in methods:
        res = TrialResult(method=m, seed=int(seed))
        if fact is not None:
            res.converged = fact.converged
            res.bigamp_sweeps = fact.iterations_used
            res.residual_history = list(fact.residual_history)
        info = est[m]
        if "error" in info:
            res.failed = True
            res.wall_ms = est["bigamp_ms"]
            results.append(res)
            continue
        res.completion_iters = info["completion"].iterations_used
        res.wall_ms = est["bigamp_ms"] + info["ms"]
        evaluate_trial(res, fact.G, info["H"], channels, fact.Z, obs.Z)
        if keep_estimates:
            res.estimates = {"G": fact.G, "Z": fact.Z, "A": info["A"], "H": info["H"],
                             "channels": channels, "pilots": pilots, "observation": obs}
        results.append(res)
    return results


def run_trial(config: SystemConfig, method: str, seed: int, options: PipelineOptions = None,
              keep_estimates: bool = False) -> TrialResult:
    return run_trial_methods(config, [method], seed, options, keep_estimates)[0]


def trial_seed(master_seed: int, grid_index: int, trial_index: int) -> int:
    """Stable 64-bit seed for one trial of one grid point."""
    ss = np.random.SeedSequence([int(master_seed), int(grid_index), int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SweepSpec:
    base: SystemConfig
    axis1_name: str
    axis1_values: tuple
    axis2_name: str = ""
    axis2_values: tuple = ()
    trials_per_point: int = 1
    methods: tuple = ("jbf-mc",)
    options: PipelineOptions = field(default_factory=PipelineOptions)

    def __post_init__(self):
        axes = [(self.axis1_name, self.axis1_values)]
        if self.axis2_name:
            axes.append((self.axis2_name, self.axis2_values))
        elif self.axis2_values:
            raise ConfigError("axis2_values given without axis2_name")
        for name, values in axes:
            if name not in _AXIS_NAMES:
                raise ConfigError(f"cannot sweep over {name!r}")
            if len(values) == 0:
                raise ConfigError(f"axis {name!r} has no values")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"values of axis {name!r} must be strictly increasing")
        if self.trials_per_point < 1:
            raise ConfigError("trials_per_point must be >= 1")
        if not self.methods:
            raise ConfigError("no methods selected")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for point in self.points():
            self.config_at(point)  # validates every grid point up front

    def points(self) -> list[tuple]:
        second = self.axis2_values if self.axis2_name else (None,)
        return [(a, b) for a in self.axis1_values for b in second]

    def config_at(self, point) -> SystemConfig:
        changes = {self.axis1_name: point[0]}
        if self.axis2_name:
            changes[self.axis2_name] = point[1]
        for key, value in list(changes.items()):
            if key != "snr_db" and key not in ("sparsity_level", "noise_power"):
                changes[key] = int(value)
        return self.base.with_values(**changes)


_SWEEP_KEYS = ("axis1_name", "axis1_values", "axis2_name", "axis2_values",
               "trials_per_point", "methods")


def _float_list(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def sweep_spec_from_mapping(values: dict) -> SweepSpec:
    base, options = config_from_mapping(values, allow_extra=_SWEEP_KEYS)
    try:
        return SweepSpec(
            base=base,
            axis1_name=values.get("axis1_name", ""),
            axis1_values=_float_list(values.get("axis1_values", "")),
            axis2_name=values.get("axis2_name", ""),
            axis2_values=_float_list(values.get("axis2_values", "")),
            trials_per_point=int(values.get("trials_per_point", "1")),
            methods=tuple(m.strip() for m in values.get("methods", "jbf-mc").split(",") if m.strip()),
            options=options,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_sweep_spec(path) -> SweepSpec:
    return sweep_spec_from_mapping(read_key_values(path))


@dataclass
class SweepRow:
    method: str
    axis1_name: str
    axis1: float
    axis2_name: str
    axis2: float  # nan when there is no second axis
    nmse_g: float  # linear mean over successful trials
    nmse_h: float
    fail_rate: float
    iters: float
    wall_ms: float = None  # None unless timing was recorded

    @property
    def nmse_g_db(self) -> float:
        return to_db(self.nmse_g)

    @property
    def nmse_h_db(self) -> float:
        return to_db(self.nmse_h)


@dataclass
class SweepResult:
    rows: list
    trials: list = field(default_factory=list, repr=False)  # per-point lists of TrialResult

    def __len__(self):
        return len(self.rows)

    def select(self, method: str) -> list:
        return [r for r in self.rows if r.method == method]


def _run_task(task):
    config, methods, seed, options = task
    return run_trial_methods(config, methods, seed, options)


def _aggregate(spec, point, trials_for_method, method, record_timing):
    ok = [t for t in trials_for_method if not t.failed]
    n = len(trials_for_method)
    mean = (lambda xs: float(np.mean(xs))) if ok else (lambda xs: float("nan"))
    return SweepRow(
        method=method,
        axis1_name=spec.axis1_name,
        axis1=float(point[0]),
        axis2_name=spec.axis2_name,
        axis2=float(point[1]) if spec.axis2_name else float("nan"),
        nmse_g=mean([t.nmse_g for t in ok]),
        nmse_h=mean([t.nmse_h for t in ok]),
        fail_rate=(n - len(ok)) / n,
        iters=float(np.mean([t.bigamp_sweeps for t in trials_for_method])),
        wall_ms=float(np.mean([t.wall_ms for t in trials_for_method])) if record_timing else None,
    )


def run_sweep(spec: SweepSpec, parallelism: int = 1, record_timing: bool = False,
              progress=None) -> SweepResult:
    """Run ``trials_per_point`` seeded trials at every grid point.

    Trial seeds depend only on the master seed and the (grid, trial) index,
    and results are aggregated in grid order, so the output does not depend
    on ``parallelism``. Wall times are nondeterministic and only reported
    when ``record_timing`` is set.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    points = spec.points()
    tasks = []
    for gi, point in enumerate(points):
        cfg = spec.config_at(point)
        for ti in range(spec.trials_per_point):
            tasks.append((cfg, tuple(spec.methods), trial_seed(spec.base.rng_seed, gi, ti), spec.options))

    if parallelism == 1:
        outputs = []
        for i, task in enumerate(tasks):
            outputs.append(_run_task(task))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outputs = list(pool.map(_run_task, tasks, chunksize=1))

    rows, per_point = [], []
    k = spec.trials_per_point
    for gi, point in enumerate(points):
        chunk = outputs[gi * k:(gi + 1) * k]
        per_point.append(chunk)
    for mi, method in enumerate(spec.methods):
        for gi, point in enumerate(points):
            trials = [out[mi] for out in per_point[gi]]
            rows.append(_aggregate(spec, point, trials, method, record_timing))
    return SweepResult(rows=rows, trials=per_point)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def _parse(text):
    if text == "":
        return None
    return float(text)


def csv_text(result: SweepResult) -> str:
    if not result.rows:
        raise ValueError("refusing to write an empty sweep result")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in result.rows:
        writer.writerow([r.method, r.axis1_name, _fmt(r.axis1), r.axis2_name, _fmt(r.axis2),
                         _fmt(r.nmse_g_db), _fmt(r.nmse_h_db), _fmt(r.fail_rate), _fmt(r.iters),
                         _fmt(r.wall_ms)])
    return buf.getvalue()


def emit_csv(result: SweepResult, path) -> None:
    text = csv_text(result)
    Path(path).write_text(text)


def _from_db(x):
    if x is None or math.isnan(x):
        return float("nan")
    if x == -math.inf:
        return 0.0
    return 10.0 ** (x / 10.0)


def read_csv(path) -> SweepResult:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = []
        for rec in reader:
            d = dict(zip(header, rec))
            rows.append(SweepRow(
                method=d["method"], axis1_name=d["axis1_name"], axis1=float(d["axis1"]),
                axis2_name=d["axis2_name"], axis2=float(d["axis2"]),
                nmse_g=_from_db(_parse(d["nmse_g_db"])), nmse_h=_from_db(_parse(d["nmse_h_db"])),
                fail_rate=float(d["fail_rate"]), iters=float(d["iters"]),
                wall_ms=_parse(d["wall_ms"]),
            ))
    return SweepResult(rows=rows)


def emit_plot(result: SweepResult, path) -> None:
    """SVG figure: NMSE curves on a log axis, or dB heatmaps for two-axis sweeps."""
    if not result.rows:
        raise ValueError("nothing to plot")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = list(dict.fromkeys(r.method for r in result.rows))
    first = result.rows[0]
    two_axis = bool(first.axis2_name)
    if not two_axis:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
        for ax, attr, label in zip(axes, ("nmse_g", "nmse_h"), ("G", "H")):
            for m in methods:
                rows = [r for r in result.rows if r.method == m]
                ax.semilogy([r.axis1 for r in rows], [getattr(r, attr) for r in rows],
                            marker="o", label=m)
            ax.set_xlabel(first.axis1_name)
            ax.set_ylabel(f"NMSE of {label}")
            ax.grid(True, which="both", alpha=0.3)
        axes[0].legend()
    else:
        fig, axes = plt.subplots(len(methods), 2, figsize=(9, 3.6 * len(methods)), squeeze=False)
        for i, m in enumerate(methods):
            rows = [r for r in result.rows if r.method == m]
            xs = sorted(set(r.axis1 for r in rows))
            ys = sorted(set(r.axis2 for r in rows))
            for j, (attr, label) in enumerate((("nmse_g_db", "G"), ("nmse_h_db", "H"))):
                grid = np.full((len(ys), len(xs)), np.nan)
                for r in rows:
                    grid[ys.index(r.axis2), xs.index(r.axis1)] = getattr(r, attr)
                ax = axes[i, j]
                im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis",
                               extent=(min(xs), max(xs), min(ys), max(ys)))
                fig.colorbar(im, ax=ax, label="NMSE (dB)")
                ax.set_xlabel(first.axis1_name)
                ax.set_ylabel(first.axis2_name)
                ax.set_title(f"{m}: {label}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
