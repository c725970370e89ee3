"""Config-driven batch experiments: run, write CSVs, summarize, re-aggregate.

A run directory holds one ``<schedule>__rep<NNN>.csv`` per (schedule,
replicate) with header ``n,gamma,err_sgd,err_avg``, plus ``summary.txt`` and
``metadata.json``.  ``report`` re-reads the CSVs and writes replicate means
and refitted slopes under ``<dir>/report/``.
"""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import FitError, PreconditionError
from .optim import Constant, PolynomialDecay, QuadraticOracle, Trajectory, mean_trajectory
from .oracles import fit_power_law
from .pca import PcaProblem
from .sphere import SphereMeanProblem
from .streams import (
    MatrixStream,
    SpectrumSpec,
    counterexample_claimed_eigenvalues,
    empirical_mean,
    make_covariance,
)

log = logging.getLogger(__name__)

CSV_HEADER = "n,gamma,err_sgd,err_avg"
SEED_ENV = "RIEMANN_AVG_SEED"
EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3

# Eigengap presets for the conditioning experiment (beta sets lambda_k - lambda_{k+1}).
PRESETS = {"well": {"alpha": 1.0, "beta": 0.2}, "poor": {"alpha": 1.0, "beta": 0.001}}


class PolynomialSchedule(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["polynomial"]
    C: float = Field(1.0, gt=0)
    alpha: float = Field(gt=0, le=1)

    def build(self):
        return PolynomialDecay(self.C, self.alpha)


class ConstantSchedule(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: Literal["constant"]
    gamma: float = Field(gt=0)

    def build(self):
        return Constant(self.gamma)


ScheduleConfig = Annotated[Union[PolynomialSchedule, ConstantSchedule], Field(discriminator="kind")]


class SpectrumConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    alpha: float = Field(ge=0)
    beta: float = Field(ge=0)
    eigvecs: Literal["identity", "random"] = "random"


def _poly(C, alpha):
    return {"kind": "polynomial", "C": C, "alpha": alpha}


DEFAULTS = {
    "pca_conditioning": dict(
        d=50, k=10, n_iters=1_000_000, replicates=10, preset="well",
        schedules=[{"kind": "constant", "gamma": 0.01}, _poly(1.0, 0.5), _poly(1.0, 1.0)],
    ),
    "pca_step_robustness": dict(
        d=50, k=10, n_iters=1_000_000, replicates=10, preset="well",
        schedules=[_poly(0.2, 0.5), _poly(1.0, 0.5), _poly(5.0, 0.5)],
    ),
    "sphere_mean": dict(d=3, n_iters=100_000, replicates=20, dispersion=0.2,
                        schedules=[_poly(1.0, 0.5)]),
    "counterexample": dict(
        d=2, k=1, n_iters=1_000_000, replicates=10,
        schedules=[{"kind": "constant", "gamma": 1.0}, _poly(1.0, 0.5)],
    ),
    "covariance_check": dict(
        d=2, k=1, n_iters=100_000, replicates=400, covariance_problem="pca",
        eigenvalues=[0.75, 0.25], schedules=[_poly(1.0, 0.5)],
    ),
}


class ExperimentConfig(BaseModel):
    """Validated experiment description; unset fields take per-experiment defaults."""

    model_config = ConfigDict(extra="forbid")

    experiment: Literal[
        "pca_conditioning", "pca_step_robustness", "sphere_mean", "counterexample",
        "covariance_check",
    ]
    d: Optional[int] = Field(None, ge=1)
    k: Optional[int] = Field(None, ge=1)
    n_iters: Optional[int] = Field(None, ge=100)
    replicates: Optional[int] = Field(None, ge=1)
    seed: int = 0
    schedules: Optional[list[ScheduleConfig]] = Field(None, min_length=1)
    preset: Optional[Literal["well", "poor"]] = None
    spectrum: Optional[SpectrumConfig] = None
    update_rule: Literal["power", "rsgd"] = "power"
    average_rule: Literal["power", "retraction"] = "power"
    dispersion: Optional[float] = Field(None, gt=0, le=0.5)
    covariance_problem: Optional[Literal["pca", "euclidean"]] = None
    eigenvalues: Optional[list[float]] = None
    per_decade: int = Field(10, ge=1)
    fit_n_min: Optional[int] = Field(None, ge=1)
    output_dir: str = "out"

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data):
        if isinstance(data, dict) and data.get("experiment") in DEFAULTS:
            merged = dict(DEFAULTS[data["experiment"]])
            if data.get("spectrum") is not None:
                merged.pop("preset", None)
            merged.update({k: v for k, v in data.items() if v is not None})
            return merged
        return data

    @model_validator(mode="after")
    def _consistent(self):
        if self.k is not None and self.d is not None and self.k >= self.d:
            raise ValueError("k must be smaller than d")
        if self.experiment == "counterexample" and (self.d != 2 or self.k != 1):
            raise ValueError("counterexample requires d=2 and k=1")
        if self.experiment == "covariance_check" and self.covariance_problem == "pca":
            if self.eigenvalues is None or len(self.eigenvalues) != self.d:
                raise ValueError("eigenvalues must list d values for the PCA covariance check")
            if min(self.eigenvalues) < 0:
                raise ValueError("eigenvalues must be non-negative")
        if self.experiment == "sphere_mean" and not all(
            s.kind == "polynomial" and 0.5 <= s.alpha < 1 for s in self.schedules
        ):
            raise ValueError("sphere_mean schedules must be polynomial with alpha in [1/2, 1)")
        if self.fit_n_min is not None and self.fit_n_min >= self.n_iters:
            raise ValueError("fit_n_min must be below n_iters")
        return self

    def schedule_objects(self):
        return [s.build() for s in self.schedules]

    @property
    def fit_window_min(self) -> int:
        return self.fit_n_min if self.fit_n_min is not None else max(1, self.n_iters // 100)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON config; ``RIEMANN_AVG_SEED`` overrides the seed.

    Raises:
        PreconditionError: with field-level messages on any validation failure.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PreconditionError(f"cannot read config {path}: {exc}") from exc
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip() != "":
        try:
            raw["seed"] = int(env)
        except ValueError as exc:
            raise PreconditionError(f"{SEED_ENV}={env!r} is not an integer") from exc
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"  {'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise PreconditionError("invalid config:\n" + "\n".join(lines)) from exc


# --------------------------------------------------------------------------
# CSV I/O


def fmt(x: float) -> str:
    """17 significant digits: round-trips every float64 exactly."""
    return format(float(x), ".17g")


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    lines = [CSV_HEADER]
    for n, g, e, a in zip(traj.iters, traj.gamma, traj.err_sgd, traj.err_avg):
        lines.append(f"{int(n)},{fmt(g)},{fmt(e)},{fmt(a)}")
    path.write_text("\n".join(lines) + "\n")


class MalformedCsv(PreconditionError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path


def read_trajectory_csv(path: Path, seed: int = 0, metric_id: str = "") -> Trajectory:
    try:
        text = Path(path).read_text().splitlines()
    except OSError as exc:
        raise MalformedCsv(path, str(exc)) from exc
    if not text or text[0].strip() != CSV_HEADER:
        raise MalformedCsv(path, f"header must be exactly {CSV_HEADER!r}")
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise MalformedCsv(path, f"line {lineno} has {len(parts)} fields")
        try:
            rows.append((int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError as exc:
            raise MalformedCsv(path, f"line {lineno}: {exc}") from exc
    if not rows:
        raise MalformedCsv(path, "no data rows")
    a = np.array(rows, dtype=object)
    try:
        return Trajectory(iters=a[:, 0].astype(np.int64), gamma=a[:, 1].astype(float),
                          err_sgd=a[:, 2].astype(float), err_avg=a[:, 3].astype(float),
                          seed=seed, metric_id=metric_id)
    except PreconditionError as exc:
        raise MalformedCsv(path, str(exc)) from exc


# --------------------------------------------------------------------------
# running


def _build(cfg: ExperimentConfig) -> dict:
    """Problem objects and metadata for a validated config."""
    meta: dict = {"experiment": cfg.experiment, "seed": cfg.seed, "n_iters": cfg.n_iters,
                  "replicates": cfg.replicates, "d": cfg.d, "k": cfg.k}
    if cfg.experiment in ("pca_conditioning", "pca_step_robustness"):
        if cfg.spectrum is not None:
            sp = cfg.spectrum.model_dump()
            meta["spectrum_source"] = "config"
        else:
            sp = dict(PRESETS[cfg.preset], eigvecs="random")
            meta["spectrum_source"] = f"preset:{cfg.preset}"
        spec = SpectrumSpec(cfg.d, cfg.k, sp["alpha"], sp["beta"], sp["eigvecs"], cfg.seed)
        cov = make_covariance(spec)
        meta.update(spectrum_alpha=sp["alpha"], spectrum_beta=sp["beta"], eigvecs=sp["eigvecs"],
                    presets=PRESETS,
                    eigengap=cov["eigengap"], update_rule=cfg.update_rule,
                    average_rule=cfg.average_rule)
        return {"kind": "pca", "problem": cov["problem"],
                "stream": MatrixStream.rank_one_gaussian(cov["H"], cfg.seed), "meta": meta}
    if cfg.experiment == "counterexample":
        stream = MatrixStream.counterexample(cfg.seed)
        problem = PcaProblem.from_matrix(stream.mean, 1)
        meta.update(update_rule=cfg.update_rule, average_rule=cfg.average_rule,
                    stream_mean_eigenvalues=[float(v) for v in problem.eigvals])
        return {"kind": "pca", "problem": problem, "stream": stream, "meta": meta}
    if cfg.experiment == "sphere_mean":
        meta["dispersion"] = cfg.dispersion
        return {"kind": "sphere", "problem": SphereMeanProblem.standard(cfg.d, cfg.dispersion),
                "meta": meta}
    # covariance_check
    meta["covariance_problem"] = cfg.covariance_problem
    if cfg.covariance_problem == "euclidean":
        return {"kind": "euclidean", "problem": QuadraticOracle(np.ones(cfg.d)), "meta": meta}
    lam = np.asarray(cfg.eigenvalues, dtype=float)
    if np.any(np.diff(lam) > 0):
        raise PreconditionError("eigenvalues must be listed in non-increasing order")
    H = np.diag(lam)
    problem = PcaProblem.from_matrix(H, cfg.k, eigvals=lam, eigvecs=np.eye(cfg.d))
    meta.update(eigenvalues=list(map(float, lam)), update_rule=cfg.update_rule,
                average_rule=cfg.average_rule)
    return {"kind": "pca", "problem": problem,
            "stream": MatrixStream.rank_one_gaussian(H, cfg.seed), "meta": meta}


def _run_group(cfg_json: str, schedule_index: int, run_indices: list[int]):
    """Worker entry point: one batch of replicates for one schedule."""
    from .engine import run_pca_batch, run_quadratic_batch, run_sphere_batch

    cfg = ExperimentConfig.model_validate_json(cfg_json)
    built = _build(cfg)
    sched = cfg.schedule_objects()[schedule_index]
    if built["kind"] == "pca":
        return run_pca_batch(built["problem"], built["stream"], sched, cfg.n_iters, cfg.seed,
                             run_indices, update_rule=cfg.update_rule,
                             average_rule=cfg.average_rule, per_decade=cfg.per_decade)
    if built["kind"] == "sphere":
        return run_sphere_batch(built["problem"], sched, cfg.n_iters, cfg.seed, run_indices,
                                per_decade=cfg.per_decade)
    return run_quadratic_batch(built["problem"], sched, cfg.n_iters, cfg.seed, run_indices,
                               per_decade=cfg.per_decade)


def _split(indices: list[int], parts: int) -> list[list[int]]:
    parts = max(1, min(parts, len(indices)))
    return [list(a) for a in np.array_split(np.asarray(indices), parts) if len(a)]


def run_replicates(cfg: ExperimentConfig, schedule_index: int, workers: int = 1):
    """All replicates of one schedule; results are independent of ``workers``."""
    groups = _split(list(range(cfg.replicates)), workers)
    cfg_json = cfg.model_dump_json()
    if len(groups) == 1:
        results = [_run_group(cfg_json, schedule_index, groups[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(groups)) as pool:
            results = list(pool.map(_run_group, [cfg_json] * len(groups),
                                    [schedule_index] * len(groups), groups))
    trajs, aborts, delta = [], {}, []
    for res in results:
        trajs.extend(res.trajectories)
        aborts.update(res.aborts)
        delta.extend(res.final_delta_sq)
    return trajs, aborts, np.asarray(delta)


def slope_lines(label: str, mean: Trajectory, n_min: int) -> list[str]:
    out = []
    n_max = int(mean.iters[-1])
    for field in ("err_sgd", "err_avg"):
        try:
            full = fit_power_law(mean.iters, getattr(mean, field), n_min)
            txt = f"slope={full.slope:+.4f} r2={full.r2:.4f} points={full.n_points}"
        except FitError as exc:
            txt = f"slope=n/a ({exc})"
        try:
            last = fit_power_law(mean.iters, getattr(mean, field), max(1, n_max // 10), min_points=3)
            txt += f" last_decade_slope={last.slope:+.4f}"
        except FitError:
            txt += " last_decade_slope=n/a"
        out.append(f"{label} {field}: {txt} final={fmt(getattr(mean, field)[-1])}")
    return out


def cmd_run(config_path, workers: int | None = None) -> int:
    """Run an experiment config; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        built = _build(cfg)
    except PreconditionError as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    workers = workers or os.cpu_count() or 1
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    n_min = cfg.fit_window_min
    summary = [f"experiment: {cfg.experiment}", f"seed: {cfg.seed}",
               f"n_iters: {cfg.n_iters}", f"replicates: {cfg.replicates}",
               f"fit window: n >= {n_min}"]
    meta = dict(built["meta"], schedules=[s.label for s in cfg.schedule_objects()],
                fit_n_min=n_min, per_decade=cfg.per_decade)
    failed = []
    for si, sched in enumerate(cfg.schedule_objects()):
        trajs, aborts, delta = run_replicates(cfg, si, workers)
        for r, t in enumerate(trajs):
            if t is not None:
                write_trajectory_csv(outdir / f"{sched.label}__rep{r:03d}.csv", t)
        for r, (it, msg) in sorted(aborts.items()):
            failed.append(f"{sched.label} replicate {r}: aborted at iteration {it}: {msg}")
        done = [t for t in trajs if t is not None]
        if done:
            summary.extend(slope_lines(sched.label, mean_trajectory(done), n_min))
        ok = np.isfinite(delta)
        if built["kind"] != "sphere" and ok.sum() >= 2:
            scaled = cfg.n_iters * delta[ok]
            line = (f"{sched.label} scaled_delta: empirical={fmt(scaled.mean())} "
                    f"stderr={fmt(scaled.std(ddof=1) / np.sqrt(ok.sum()))}")
            predicted = _predicted_trace(cfg, built)
            if predicted is not None:
                line += f" predicted={fmt(predicted)}"
            summary.append(line)
    if cfg.experiment == "counterexample":
        summary.extend(_counterexample_spectrum_lines(built["stream"], cfg.seed))
    summary.extend(failed)
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")
    (outdir / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if failed:
        for line in failed:
            log.error("%s", line)
        return EXIT_ABORT
    return EXIT_OK


def _predicted_trace(cfg, built):
    from .oracles import pca_asymptotic_covariance

    if built["kind"] == "euclidean":
        return built["problem"].predicted_trace()
    if built["kind"] == "pca" and built["stream"].kind == "rank_one_gaussian":
        return pca_asymptotic_covariance(built["problem"], 1.0)["trace"]
    return None


def _counterexample_spectrum_lines(stream: MatrixStream, seed: int, n: int = 1_000_000) -> list[str]:
    from .optim import make_rng

    mc = empirical_mean(stream, n, make_rng(seed, 0, purpose=3))["mean"]
    return [
        "stream covariance eigenvalues (largest first):",
        "  claimed    " + " ".join(fmt(v) for v in counterexample_claimed_eigenvalues()),
        "  analytic   " + " ".join(fmt(v) for v in np.linalg.eigvalsh(stream.mean)[::-1]),
        f"  montecarlo " + " ".join(fmt(v) for v in np.linalg.eigvalsh(mc)[::-1]) + f" (n={n})",
    ]


# --------------------------------------------------------------------------
# report

_CSV_NAME = re.compile(r"^(?P<label>.+)__rep(?P<rep>\d+)\.csv$")


def cmd_report(csv_dir, n_min: int | None = None) -> int:
    """Aggregate a run directory into ``<dir>/report``; returns the exit code."""
    root = Path(csv_dir)
    if not root.is_dir():
        log.error("%s is not a directory", root)
        return EXIT_INVALID
    groups: dict[str, list[Path]] = {}
    for p in sorted(root.iterdir()):
        m = _CSV_NAME.match(p.name)
        if m and p.is_file():
            groups.setdefault(m["label"], []).append(p)
    if not groups:
        log.error("no <schedule>__repNNN.csv files in %s", root)
        return EXIT_INVALID
    try:
        loaded = {label: [read_trajectory_csv(p) for p in paths] for label, paths in groups.items()}
        means = {}
        for label, trajs in loaded.items():
            try:
                means[label] = mean_trajectory(trajs)
            except PreconditionError as exc:
                raise MalformedCsv(groups[label][0], f"replicates disagree: {exc}") from exc
    except MalformedCsv as exc:
        log.error("malformed CSV %s", exc)
        return EXIT_INVALID
    outdir = root / "report"
    outdir.mkdir(exist_ok=True)
    summary = []
    for label in sorted(means):
        mean = means[label]
        write_trajectory_csv(outdir / f"aggregate__{label}.csv", mean)
        window = n_min if n_min is not None else max(1, int(mean.iters[-1]) // 100)
        summary.append(f"{label}: replicates={len(loaded[label])} fit window n >= {window}")
        summary.extend(slope_lines(label, mean, window))
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")
    return EXIT_OK
