"""Experiment configurations, runners and result files.

A run writes three files into ``<out>/<experiment>-<confighash>/``:

* ``data.csv``: the main table, preceded by ``#`` comment lines carrying the
  config hash, master seed and package version;
* ``summary.json``: the config echo and aggregated results;
* ``meta.json``: timestamps, wall time and worker count.

``data.csv`` and ``summary.json`` depend only on the config and seed, so
reruns are byte-identical; everything time-dependent goes to ``meta.json``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import InvalidArgumentError
from .estimator import (
    EstimateResult,
    SampleRecord,
    dense_canonical_average,
    dense_filtered_average,
    estimate_thermal_expectation,
    estimate_trace,
    plan_samples,
    relative_variance_scan,
    replan_from_variance,
    variance_diagnostics,
)
from .hamiltonians import (
    FilterSpec,
    TrotterSpec,
    build_model,
    filter_spec_for,
    magnetization_mpo,
    microcanonical_filter,
    mpo_square,
)
from .moments import (
    analytic_relative_variance,
    empirical_moment,
    exact_first_moment,
    exact_second_moment,
    loglog_slope,
    two_design_report,
)
from .mps import MpoOperator, identity_mpo, mpo_to_dense, mpo_trace
from .sampler import RmpsSpec, derive_seed

EXPERIMENTS = ("moments-check", "trace", "variance-scan", "magnetization", "thermal")
MODELS = ("ising", "heisenberg")
OBSERVABLES = ("identity", "hamiltonian", "hamiltonian_squared", "magnetization")
METHODS = ("svd", "zipup")
# dense reference values are computed up to this many sites
DENSE_REFERENCE_LIMIT = 12


class ConfigError(InvalidArgumentError):
    """The experiment configuration is invalid."""


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _as_list(value: Any) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass(frozen=True)
class FilterConfig:
    """Energy filter or imaginary-time settings.

    ``kind = "microcanonical"``: target energy ``energy_density * N``; the
    half-width ``r`` defaults to the term-norm bound and the number of
    applications ``k`` to the value resolving ``window * sqrt(N)``.
    ``kind = "canonical"``: ``exp(-beta H / 2)`` with ``num_steps`` Trotter steps.
    """

    kind: str = "microcanonical"
    energy_density: float = -0.15
    window: float = 0.5
    half_width: float | None = None
    num_applications: int | None = None
    beta: float = 1.0
    num_steps: int = 32

    @classmethod
    def from_dict(cls, raw: dict) -> "FilterConfig":
        _require(isinstance(raw, dict), "filter must be an object")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        _require(not unknown, f"unknown filter keys: {sorted(unknown)}")
        fc = cls(**raw)
        _require(fc.kind in ("microcanonical", "canonical"), f"unknown filter kind {fc.kind!r}")
        if fc.kind == "microcanonical":
            _require(fc.window > 0, "filter.window must be positive")
            _require(fc.half_width is None or fc.half_width > 0, "filter.half_width must be positive")
            _require(
                fc.num_applications is None or (fc.num_applications >= 2 and fc.num_applications % 2 == 0),
                "filter.num_applications must be an even integer >= 2",
            )
        else:
            _require(fc.beta >= 0, "filter.beta must be non-negative")
            _require(fc.num_steps >= 1, "filter.num_steps must be positive")
        return fc

    def build(self, num_sites: int, terms: list[np.ndarray]) -> FilterSpec | TrotterSpec:
        if self.kind == "canonical":
            return TrotterSpec(self.beta, self.num_steps)
        target = self.energy_density * num_sites
        fs = filter_spec_for(terms, target, self.window * math.sqrt(num_sites), self.half_width)
        if self.num_applications is not None:
            fs = FilterSpec(fs.target_energy, fs.half_width, self.num_applications)
        return fs


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment parameters (JSON keys are the field names).

    List-valued fields (``num_sites``, ``lam``, ``chi``, ``num_samples``)
    accept a scalar or a list; single-point experiments use the first entry.
    """

    experiment: str
    model: str = "ising"
    num_sites: tuple[int, ...] = (10,)
    lam: tuple[float, ...] = (1.0,)
    chi: tuple[int, ...] = (8,)
    num_samples: tuple[int, ...] = (100,)
    runs: int = 1
    observable: str = "hamiltonian_squared"
    filter: FilterConfig = field(default_factory=FilterConfig)
    chi_max: int = 16
    cutoff: float = 0.0
    method: str = "svd"
    epsilon: float | None = None
    delta: float | None = None
    master_seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict, experiment: str | None = None) -> "ExperimentConfig":
        _require(isinstance(raw, dict), "config must be a JSON object")
        raw = dict(raw)
        kind = raw.pop("experiment", experiment)
        _require(kind is not None, "config is missing 'experiment'")
        _require(experiment is None or kind == experiment, f"config is for {kind!r}, not {experiment!r}")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        _require(not unknown, f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {"experiment": kind}
        if kind == "magnetization":
            kwargs["model"] = "heisenberg"
        for key in ("num_sites", "lam", "chi", "num_samples"):
            if key in raw:
                kwargs[key] = tuple(_as_list(raw.pop(key)))
        if "filter" in raw:
            kwargs["filter"] = FilterConfig.from_dict(raw.pop("filter"))
        kwargs.update(raw)
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        cfg = ExperimentConfig(**{**self._fields(), "master_seed": seed})
        cfg.validate()
        return cfg

    def _fields(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_dict(self) -> dict:
        out = self._fields()
        out["filter"] = asdict(self.filter)
        for key in ("num_sites", "lam", "chi", "num_samples"):
            out[key] = list(out[key])
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def validate(self) -> None:
        """Check every precondition of the requested experiment before any compute."""
        _require(self.experiment in EXPERIMENTS, f"unknown experiment {self.experiment!r}")
        _require(self.model in MODELS, f"unknown model {self.model!r}")
        _require(self.observable in OBSERVABLES, f"unknown observable {self.observable!r}")
        _require(self.method in METHODS, f"unknown method {self.method!r}")
        for name in ("num_sites", "chi", "num_samples"):
            vals = getattr(self, name)
            _require(len(vals) > 0, f"{name} must be nonempty")
            _require(
                all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in vals),
                f"{name} must be positive integers",
            )
        _require(len(self.lam) > 0, "lam must be nonempty")
        _require(all(isinstance(v, (int, float)) and math.isfinite(v) for v in self.lam), "lam must be finite numbers")
        _require(isinstance(self.runs, int) and self.runs >= 1, "runs must be a positive integer")
        _require(self.chi_max >= 1, "chi_max must be positive")
        _require(self.cutoff >= 0, "cutoff must be non-negative")
        _require(isinstance(self.master_seed, int) and 0 <= self.master_seed < 2**64, "master_seed must be a 64-bit unsigned integer")
        if self.epsilon is not None or self.delta is not None:
            _require(self.epsilon is not None and self.delta is not None, "epsilon and delta go together")
            _require(0 < self.epsilon < 1 and 0 < self.delta < 1, "epsilon and delta must be in (0, 1)")
        if self.experiment == "variance-scan":
            _require(self.runs >= 2, "variance-scan needs runs >= 2")
        if self.experiment == "magnetization":
            _require(self.model == "heisenberg", "magnetization runs use the heisenberg model")
            _require(self.filter.kind == "microcanonical", "magnetization runs use the microcanonical filter")
        if self.experiment == "moments-check":
            _require(max(self.num_sites) <= 7, "moments-check is dense; num_sites must be <= 7")
        for n in self.num_sites:
            _require(n >= 2, "num_sites must be >= 2")
            for chi in self.chi:
                try:
                    RmpsSpec(n, chi)
                except InvalidArgumentError as exc:
                    if self.experiment != "moments-check":
                        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


@dataclass
class RunOutput:
    """In-memory result of an experiment before it is written."""

    columns: list[str]
    rows: list[list[Any]]
    summary: dict


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def write_outputs(cfg: ExperimentConfig, result: RunOutput, out_dir: str | Path, meta: dict) -> Path:
    """Write ``data.csv``, ``summary.json`` and ``meta.json``; returns the run directory."""
    run_dir = Path(out_dir) / f"{cfg.experiment}-{cfg.config_hash()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# config_hash={cfg.config_hash()}\n")
    buf.write(f"# master_seed={cfg.master_seed}\n")
    buf.write(f"# version={__version__}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.rows:
        writer.writerow([_fmt(v) for v in row])
    (run_dir / "data.csv").write_text(buf.getvalue())
    summary = {
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.master_seed,
        "version": __version__,
        "config": cfg.to_dict(),
        "results": _jsonable(result.summary),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    meta = {
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.master_seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        **meta,
    }
    (run_dir / "meta.json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return run_dir


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


RECORD_COLUMNS = ["index", "x", "y", "z", "log_norm", "discarded_weight", "seed"]


def _record_row(r: SampleRecord) -> list:
    return [r.index, r.x, r.y, r.z, r.log_norm, r.discarded_weight, r.seed]


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def observable_mpo(name: str, h: MpoOperator, num_sites: int) -> MpoOperator:
    if name == "identity":
        return identity_mpo(num_sites)
    if name == "hamiltonian":
        return h
    if name == "hamiltonian_squared":
        return mpo_square(h)
    if name == "magnetization":
        return magnetization_mpo(num_sites)
    raise ConfigError(f"unknown observable {name!r}")


def _dense_reference(h: MpoOperator, b: MpoOperator, filt: FilterSpec | TrotterSpec) -> float | None:
    if h.num_sites > DENSE_REFERENCE_LIMIT:
        return None
    hd, bd = mpo_to_dense(h), mpo_to_dense(b)
    if isinstance(filt, FilterSpec):
        return dense_filtered_average(hd, bd, filt)
    return dense_canonical_average(hd, bd, filt.beta)


# --------------------------------------------------------------------------
# runners
# --------------------------------------------------------------------------


def run_moments_check(cfg: ExperimentConfig, workers: int = 1) -> RunOutput:
    """Distance to the Haar second moment over ``(N, chi)`` plus empirical z-scores.

    ``num_samples[0]`` sets the empirical sample count; 1 skips the empirical part.
    """
    rows = []
    report = two_design_report(cfg.num_sites, cfg.chi)
    for r in report:
        rows.append([r.num_sites, r.bond_dim, r.distance, r.relative_distance, r.scaled_norm])
    slopes = {}
    for n in cfg.num_sites:
        sel = [r for r in report if r.num_sites == n]
        if len(sel) >= 2:
            slopes[n] = loglog_slope([r.bond_dim for r in sel], [r.relative_distance for r in sel])
    empirical = []
    m = cfg.num_samples[0]
    if m > 1:
        for n in cfg.num_sites:
            for chi in cfg.chi:
                if chi > 2 ** (n - 1):
                    continue
                spec = RmpsSpec(n, chi, master_seed=cfg.master_seed)
                for order in (1, 2):
                    rng = np.random.default_rng(derive_seed(cfg.master_seed, n, chi, order))
                    em = empirical_moment(spec, order, m, rng)
                    exact = exact_first_moment(spec) if order == 1 else exact_second_moment(spec)
                    z = em.z_scores(exact)
                    empirical.append(
                        {
                            "num_sites": n,
                            "chi": chi,
                            "order": order,
                            "num_samples": m,
                            "max_abs_deviation": float(np.max(np.abs(em.mean - exact))),
                            "max_z": float(z.max()),
                            "clt_envelope": 5 / math.sqrt(m),
                        }
                    )
    summary = {"loglog_slope_vs_chi": slopes, "empirical": empirical}
    return RunOutput(["num_sites", "chi", "distance", "relative_distance", "scaled_norm"], rows, summary)


def run_trace(cfg: ExperimentConfig, workers: int = 1) -> RunOutput:
    """``Tr(O)`` from random-MPS samples, compared with the exact MPO trace."""
    n, chi, lam, m = cfg.num_sites[0], cfg.chi[0], cfg.lam[0], cfg.num_samples[0]
    h, _ = build_model(cfg.model, n, lam)
    op = observable_mpo(cfg.observable, h, n)
    spec = RmpsSpec(n, chi, master_seed=cfg.master_seed)
    res = estimate_trace(op, spec, m, workers=workers)
    exact = mpo_trace(op).real
    summary = {
        **res.summary(),
        "exact_trace": exact,
        "z_score": (res.mean - exact) / res.standard_error if res.standard_error > 0 else 0.0,
    }
    return RunOutput(RECORD_COLUMNS, [_record_row(r) for r in res.records], summary)


def run_variance_scan(cfg: ExperimentConfig, workers: int = 1) -> RunOutput:
    """Relative variance of the M-sample trace estimator over ``chi`` and ``M``."""
    n, lam = cfg.num_sites[0], cfg.lam[0]
    h, _ = build_model(cfg.model, n, lam)
    op = observable_mpo(cfg.observable, h, n)
    spec = RmpsSpec(n, max(cfg.chi), master_seed=cfg.master_seed)
    scan = relative_variance_scan(op, spec, cfg.chi, cfg.num_samples, cfg.runs, workers=workers)
    rows = []
    for s in scan:
        for run, mean in enumerate(s.run_means):
            rows.append([s.chi, s.num_samples, run, mean, s.relative_variance, s.num_samples * s.chi**2])
    trace = mpo_trace(op).real
    per_chi = {}
    for chi in cfg.chi:
        sel = [s for s in scan if s.chi == chi]
        single = analytic_relative_variance(RmpsSpec(n, chi), op, trace) if trace != 0 else float("nan")
        entry = {
            "relative_variance": {s.num_samples: s.relative_variance for s in sel},
            "analytic_single_sample": single,
        }
        if len(sel) >= 2:
            entry["slope_vs_M"] = loglog_slope([s.num_samples for s in sel], [s.relative_variance for s in sel])
        per_chi[chi] = entry
    return RunOutput(
        ["chi", "M", "run", "mean_x", "rel_var", "M_chi2"],
        rows,
        {"exact_trace": trace, "per_chi": per_chi},
    )


@dataclass(frozen=True)
class CurvePoint:
    num_sites: int
    lam: float
    mean: float
    standard_error: float
    energy_density: float
    reference: float | None
    filter: FilterSpec
    records: tuple[SampleRecord, ...]


def magnetization_curve(
    num_sites: int,
    lams: list[float],
    chi: int,
    realizations: int,
    filter_config: FilterConfig,
    chi_max: int,
    master_seed: int,
    *,
    cutoff: float = 0.0,
    method: str = "zipup",
    workers: int = 1,
    dense_reference: bool = True,
    on_point: Callable[[CurvePoint], None] | None = None,
) -> list[CurvePoint]:
    """Filtered-ensemble magnetization ``(1/N) sum Z`` of the Heisenberg chain over a field grid.

    Each realization is a single filtered random MPS; the point estimate is
    the mean over realizations.
    """
    b = magnetization_mpo(num_sites)
    points = []
    for i, lam in enumerate(lams):
        h, terms = build_model("heisenberg", num_sites, lam)
        fs = filter_config.build(num_sites, terms)
        spec = RmpsSpec(num_sites, chi, master_seed=derive_seed(master_seed, num_sites, i))
        g = microcanonical_filter(h, fs)
        res = estimate_thermal_expectation(
            h, b, fs, spec, realizations, chi_max, cutoff, g=g, method=method, workers=workers
        )
        ref = _dense_reference(h, b, fs) if dense_reference else None
        energy = float(np.mean([r.energy for r in res.records])) / num_sites
        point = CurvePoint(num_sites, lam, res.mean, res.standard_error, energy, ref, fs, res.records)
        if on_point is not None:
            on_point(point)
        points.append(point)
    return points


def run_magnetization(cfg: ExperimentConfig, workers: int = 1) -> RunOutput:
    """Magnetization curve for every ``N`` in the config, one random MPS per realization."""
    rows = []
    points_out = []
    for n in cfg.num_sites:
        curve = magnetization_curve(
            n,
            list(cfg.lam),
            cfg.chi[0],
            cfg.runs,
            cfg.filter,
            cfg.chi_max,
            cfg.master_seed,
            cutoff=cfg.cutoff,
            method=cfg.method,
            workers=workers,
        )
        for p in curve:
            for r in p.records:
                rows.append([n, p.lam, r.index, r.z, r.energy / n, r.log_norm, r.discarded_weight, r.seed])
            points_out.append(
                {
                    "num_sites": n,
                    "lam": p.lam,
                    "magnetization": p.mean,
                    "standard_error": p.standard_error,
                    "energy_density": p.energy_density,
                    "target_energy_density": cfg.filter.energy_density,
                    "half_width": p.filter.half_width,
                    "num_applications": p.filter.num_applications,
                    "dense_reference": p.reference,
                }
            )
    columns = ["num_sites", "lam", "realization", "magnetization", "energy_density", "log_norm", "discarded_weight", "seed"]
    return RunOutput(columns, rows, {"points": points_out})


def run_thermal_expectation(cfg: ExperimentConfig, workers: int = 1) -> RunOutput:
    """Filtered-ensemble expectation of one observable at one parameter point."""
    n, chi, lam = cfg.num_sites[0], cfg.chi[0], cfg.lam[0]
    h, terms = build_model(cfg.model, n, lam)
    b = observable_mpo(cfg.observable, h, n)
    filt = cfg.filter.build(n, terms)
    plan = None
    m = cfg.num_samples[0]
    if cfg.epsilon is not None:
        plan = plan_samples(cfg.epsilon, cfg.delta, chi)
        m = plan.num_samples
    spec = RmpsSpec(n, chi, master_seed=cfg.master_seed)
    res = estimate_thermal_expectation(
        h, b, filt, spec, m, cfg.chi_max, cfg.cutoff,
        bond_terms=terms, method=cfg.method, workers=workers,
    )
    summary: dict[str, Any] = {**res.summary(), "filter": asdict(filt)}
    summary["energy_density"] = float(np.mean([r.energy for r in res.records])) / n
    if m >= 2:
        diag = variance_diagnostics(res.records, chi)
        summary["diagnostics"] = asdict(diag)
        if plan is not None:
            summary["plan"] = asdict(plan)
            summary["replanned_num_samples"] = replan_from_variance(plan.epsilon, plan.delta, diag.rv_z)
            summary["note"] = (
                "the planned sample count uses a loose variance bound; "
                "replanned_num_samples uses the measured relative variance instead"
            )
    summary["dense_reference"] = _dense_reference(h, b, filt)
    return RunOutput(RECORD_COLUMNS + ["energy"], [_record_row(r) + [r.energy] for r in res.records], summary)


RUNNERS: dict[str, Callable[[ExperimentConfig, int], RunOutput]] = {
    "moments-check": run_moments_check,
    "trace": run_trace,
    "variance-scan": run_variance_scan,
    "magnetization": run_magnetization,
    "thermal": run_thermal_expectation,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path, workers: int = 1) -> Path:
    """Run ``cfg`` and write its output files; returns the run directory."""
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    result = RUNNERS[cfg.experiment](cfg, workers)
    meta = {
        "started_utc": started.isoformat(),
        "wall_time_seconds": time.perf_counter() - t0,
        "workers": workers,
    }
    return write_outputs(cfg, result, out_dir, meta)


def load_config(path: str | Path, experiment: str | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw, experiment)
