"""Experiment orchestration: config files, method dispatch, reports.

An experiment is described by a single JSON document (schema-validated before
any compute) naming a preset, a method subset, and the discretization knobs.
``run_experiment`` executes the requested methods, writes plot-ready CSVs
under ``<outdir>/<preset>/<method>/`` and a ``report.json`` beside them, and
returns the report as a dict.  A method failure is recorded in the report and
does not abort the others.

Everything written is a pure function of the config: no wall-clock content,
sorted JSON keys, repr-formatted floats, and thread count never changes bytes.
"""

from __future__ import annotations

import json
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from .coefficients import CoefficientModel
from .errors import ConfigError
from .fokkerplanck import FPSolution, build_fp_problem, solve_fp
from .malliavin import (covariance_curve, ellipticity_bound_check,
                        simulate_first_variation, zy_residual)
from .measures import (EmpiricalMeasure, GridAxis, GridDensity, _fmt,
                       empirical_to_csv, grid_density_to_csv, grid_marginal,
                       grid_radial_moment, empirical_radial_moment, kde_1d,
                       l1_grid_distance, w2_cloud_vs_density_1d,
                       w2_empirical_1d, w2_sliced)
from .particle import InitialLaw, PathBundle, TimeGrid, simulate_interacting
from .picard import PicardRun, picard_run
from .presets import get_preset, preset_defaults, preset_names

_METHODS = ("particles", "picard", "fp", "malliavin")
_ENV_OUTDIR = "MVSIM_OUTDIR"

_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["preset", "methods", "n_particles", "steps", "seed"],
    "properties": {
        "preset": {"type": "string"},
        "overrides": {"type": "object", "additionalProperties": {"type": "number"}},
        "methods": {
            "type": "array",
            "items": {"enum": list(_METHODS)},
            "minItems": 1,
            "uniqueItems": True,
        },
        "n_particles": {"type": "integer", "minimum": 1},
        "steps": {"type": "integer", "minimum": 1},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "snapshot_times": {
            "type": "array",
            "items": {"type": "number", "minimum": 0},
            "minItems": 1,
        },
        "picard": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 2},
                "n_slices": {"type": "integer", "minimum": 1},
            },
        },
        "fp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "domain": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"},
                              "minItems": 2, "maxItems": 2},
                    "minItems": 1, "maxItems": 2,
                },
                "nodes": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 2},
                    "minItems": 1, "maxItems": 2,
                },
                "dt": {"anyOf": [{"const": "auto"},
                                 {"type": "number", "exclusiveMinimum": 0}]},
            },
        },
        "malliavin": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 1},
                "lambda": {"type": "number", "minimum": 0},
                "slack_factor": {"type": "number", "minimum": 0},
            },
        },
        "as_printed": {"type": "boolean"},
        "outdir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
    },
}


def validate_config(data: dict) -> None:
    """Schema-check a raw config dict; ConfigError carries the field path."""
    try:
        jsonschema.validate(data, _CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        path = ".".join(str(p) for p in e.absolute_path)
        raise ConfigError(e.message, field_path=path) from None
    if data["preset"] not in preset_names():
        raise ConfigError(
            f"unknown preset {data['preset']!r}; known: {', '.join(preset_names())}",
            field_path="preset")
    if data["seed"] >= 1 << 63:
        raise ConfigError("seed must be below 2**63", field_path="seed")


@dataclass
class ExperimentConfig:
    """A validated experiment description with defaults resolved."""

    preset: str
    methods: tuple[str, ...]
    n_particles: int
    steps: int
    seed: int
    overrides: dict = field(default_factory=dict)
    horizon: float | None = None
    snapshot_times: tuple[float, ...] | None = None
    picard_tol: float = 1e-3
    picard_max_iters: int = 8
    picard_n_slices: int = 64
    fp_domain: tuple[tuple[float, float], ...] | None = None
    fp_nodes: tuple[int, ...] | None = None
    fp_dt: float | str = "auto"
    malliavin_paths: int = 100
    malliavin_lambda: float | None = None
    malliavin_slack: float = 10.0
    as_printed: bool = False
    outdir: str | None = None
    threads: int = 1
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        validate_config(data)
        pic = data.get("picard", {})
        fp = data.get("fp", {})
        mal = data.get("malliavin", {})
        return cls(
            preset=data["preset"],
            methods=tuple(data["methods"]),
            n_particles=data["n_particles"],
            steps=data["steps"],
            seed=data["seed"],
            overrides=dict(data.get("overrides", {})),
            horizon=data.get("horizon"),
            snapshot_times=tuple(data["snapshot_times"]) if "snapshot_times" in data else None,
            picard_tol=pic.get("tol", 1e-3),
            picard_max_iters=pic.get("max_iters", 8),
            picard_n_slices=pic.get("n_slices", 64),
            fp_domain=tuple(tuple(b) for b in fp["domain"]) if "domain" in fp else None,
            fp_nodes=tuple(fp["nodes"]) if "nodes" in fp else None,
            fp_dt=fp.get("dt", "auto"),
            malliavin_paths=mal.get("n_paths", 100),
            malliavin_lambda=mal.get("lambda"),
            malliavin_slack=mal.get("slack_factor", 10.0),
            as_printed=data.get("as_printed", False),
            outdir=data.get("outdir"),
            threads=data.get("threads", 1),
            raw=dict(data),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"not valid JSON: {e}", field_path=str(path)) from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object", field_path=str(path))
        return cls.from_dict(data)


def list_presets() -> list[dict]:
    """Stable sorted table of shipped presets and their default parameters."""
    rows = []
    for name in preset_names():
        inst = get_preset(name)
        rows.append({
            "name": name,
            "summary": inst.summary,
            "dimension": inst.model.d,
            "horizon": inst.horizon,
            "defaults": dict(sorted(preset_defaults(name).items())),
        })
    return rows


def _publish(path: Path, writer) -> None:
    """Write through a temp file so the final name never holds partial data."""
    tmp = path.with_name(path.name + ".tmp")
    try:
        writer(tmp)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"failed writing {path}: {e}") from e


def _write_csv(path: Path, header: str, rows) -> None:
    def w(p):
        with open(p, "w") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")
    _publish(path, w)


def _tkey(t: float) -> str:
    return f"t={t:g}"


def emit_plotdata(artifact, outdir, preset: str, method: str) -> list[Path]:
    """Write plot-ready CSVs named ``{preset}_{method}_t{time:g}.csv``.

    Accepts a GridDensity, a ``(time, EmpiricalMeasure)`` pair, a PicardRun
    (gap log, one row per consecutive solve pair), or a sequence of these.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if isinstance(artifact, GridDensity):
        dest = out / f"{preset}_{method}_t{artifact.time:g}.csv"
        _publish(dest, lambda p: grid_density_to_csv(artifact, p))
        written.append(dest)
    elif isinstance(artifact, PicardRun):
        dest = out / f"{preset}_{method}_gaps.csv"
        _write_csv(dest, "iter,gap",
                   [(i + 2, float(g)) for i, g in enumerate(artifact.gaps)])
        written.append(dest)
    elif isinstance(artifact, tuple) and len(artifact) == 2 \
            and isinstance(artifact[1], EmpiricalMeasure):
        t, mu = artifact
        dest = out / f"{preset}_{method}_t{float(t):g}.csv"
        _publish(dest, lambda p: empirical_to_csv(mu, p))
        written.append(dest)
    elif isinstance(artifact, (list, tuple)):
        for item in artifact:
            written.extend(emit_plotdata(item, out, preset, method))
    else:
        raise TypeError(f"no plot-data writer for {type(artifact).__name__}")
    return written


def _moment_table(times, measures_or_grids) -> dict:
    table = {}
    for t, obj in zip(times, measures_or_grids):
        if isinstance(obj, GridDensity):
            mom = {f"order{k}": grid_radial_moment(obj, k) for k in (1, 2, 4)}
        else:
            mom = {f"order{k}": empirical_radial_moment(obj, k) for k in (1, 2, 4)}
        table[_tkey(t)] = mom
    return table


def _moments_csv(path: Path, table: dict, times) -> None:
    rows = [(float(t), table[_tkey(t)]["order1"], table[_tkey(t)]["order2"],
             table[_tkey(t)]["order4"]) for t in times]
    _write_csv(path, "t,order1,order2,order4", rows)


def _downsample(n: int, cap: int = 4097) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, cap)).astype(int))


def _marginal_cloud(mu: EmpiricalMeasure, axis_index: int) -> EmpiricalMeasure:
    return EmpiricalMeasure(mu.points[:, axis_index:axis_index + 1].copy(),
                            mu.weights.copy())


class _Experiment:
    """One run_experiment invocation; holds resolved objects between methods."""

    def __init__(self, cfg: ExperimentConfig, outdir: Path, threads: int):
        self.cfg = cfg
        self.threads = threads
        preset = get_preset(cfg.preset, cfg.overrides)
        self.preset = preset
        self.model: CoefficientModel = preset.model
        self.law: InitialLaw = preset.law
        if cfg.as_printed:
            if preset.printed_model is not None:
                self.model = preset.printed_model
            if preset.printed_law is not None:
                self.law = preset.printed_law
        horizon = cfg.horizon if cfg.horizon is not None else preset.horizon
        self.grid = TimeGrid(float(horizon), cfg.steps)
        snaps = cfg.snapshot_times if cfg.snapshot_times is not None else (float(horizon),)
        for t in snaps:
            if not 0.0 <= t <= horizon + 1e-12:
                raise ConfigError(f"snapshot time {t} outside [0, {horizon}]",
                                  field_path="snapshot_times")
            try:
                self.grid.index_of(t)
            except ValueError:
                raise ConfigError(f"snapshot time {t} is not a grid node",
                                  field_path="snapshot_times") from None
        self.snapshot_times = tuple(sorted(set(float(t) for t in snaps)))
        self.fp_domain = cfg.fp_domain if cfg.fp_domain is not None else preset.fp_domain
        self.fp_nodes = cfg.fp_nodes if cfg.fp_nodes is not None else preset.fp_nodes
        if len(self.fp_domain) != self.model.d or len(self.fp_nodes) != self.model.d:
            raise ConfigError("fp domain/nodes dimension does not match the preset",
                              field_path="fp")
        self.axes = tuple(GridAxis(float(lo), float(hi), int(n))
                          for (lo, hi), n in zip(self.fp_domain, self.fp_nodes))
        self.base = outdir / preset.name
        self.bundle: PathBundle | None = None
        self.picard: PicardRun | None = None
        self.fp: FPSolution | None = None

    def _dir(self, method: str) -> Path:
        d = self.base / method
        d.mkdir(parents=True, exist_ok=True)
        return d

    # method runners: each returns a report fragment

    def run_particles(self) -> dict:
        cfg = self.cfg
        self.bundle = simulate_interacting(self.model, self.law, self.grid,
                                           cfg.n_particles, cfg.seed)
        d = self._dir("particles")
        clouds = {}
        for t in self.snapshot_times:
            mu = self.bundle.snapshot(self.grid.index_of(t))
            clouds[t] = mu
            emit_plotdata((t, mu), d, self.preset.name, "particles")
            self._write_kde(d, t, mu)
        mom_times = sorted({0.0} | set(self.snapshot_times))
        mom_objs = [clouds.get(t) or self.bundle.snapshot(self.grid.index_of(t))
                    for t in mom_times]
        table = _moment_table(mom_times, mom_objs)
        _moments_csv(d / "moments.csv", table, mom_times)
        if self.model.q:
            flow = self.bundle.realized_flow
            head = "t," + ",".join(f"s{k + 1}" for k in range(self.model.q))
            _write_csv(d / "statistics.csv", head,
                       [(float(t),) + tuple(float(v) for v in row)
                        for t, row in zip(flow.times, flow.stats)])
        return {"status": "ok", "n_particles": cfg.n_particles, "moments": table}

    def _write_kde(self, d: Path, t: float, mu: EmpiricalMeasure) -> None:
        if self.model.d == 1:
            dens = kde_1d(mu, self.axes[0], time=t)
            _publish(d / f"{self.preset.name}_particles_kde_t{t:g}.csv",
                     lambda p: grid_density_to_csv(dens, p))
        else:
            for i, ax in enumerate(self.axes):
                dens = kde_1d(_marginal_cloud(mu, i), ax, time=t)
                _publish(d / f"{self.preset.name}_particles_kde_x{i + 1}_t{t:g}.csv",
                         lambda p: grid_density_to_csv(dens, p))

    def run_picard(self) -> dict:
        cfg = self.cfg
        self.picard = picard_run(self.model, self.law, self.grid, cfg.n_particles,
                                 cfg.seed, tol=cfg.picard_tol,
                                 max_iters=cfg.picard_max_iters,
                                 checkpoints=self.snapshot_times)
        d = self._dir("picard")
        emit_plotdata(self.picard, d, self.preset.name, "picard")
        for t, mu in zip(self.picard.checkpoint_times, self.picard.final_clouds):
            emit_plotdata((t, mu), d, self.preset.name, "picard")
        table = _moment_table(self.picard.checkpoint_times, self.picard.final_clouds)
        _moments_csv(d / "moments.csv", table, self.picard.checkpoint_times)
        return {"status": "ok", "n_iters": self.picard.n_iters,
                "converged": self.picard.converged,
                "gaps": [float(g) for g in self.picard.gaps], "moments": table}

    def run_fp(self) -> dict:
        problem = build_fp_problem(self.model, self.law, self.fp_domain,
                                   self.fp_nodes, self.grid.horizon,
                                   snapshot_times=self.snapshot_times,
                                   dt=self.cfg.fp_dt)
        self.fp = solve_fp(problem)
        sol = self.fp
        d = self._dir("fp")
        emit_plotdata(sol.snapshots, d, self.preset.name, "fp")
        idx = _downsample(sol.times.size)
        _write_csv(d / "accounting.csv", "t,mass,min_value,boundary_flux",
                   [(float(sol.times[i]), float(sol.mass_curve[i]),
                     float(sol.min_value_curve[i]), float(sol.boundary_flux_curve[i]))
                    for i in idx])
        if self.model.q:
            head = "t," + ",".join(f"s{k + 1}" for k in range(self.model.q))
            _write_csv(d / "statistics.csv", head,
                       [(float(sol.times[i]),) + tuple(float(v) for v in sol.stat_curve[i])
                        for i in idx])
        table = _moment_table(sol.snapshot_times, sol.snapshots)
        _moments_csv(d / "moments.csv", table, sol.snapshot_times)
        defect = np.abs(sol.mass_curve + sol.boundary_flux_curve - 1.0)
        return {"status": "ok", "n_steps": sol.n_steps,
                "final_mass": float(sol.mass_curve[-1]),
                "final_boundary_flux": float(sol.boundary_flux_curve[-1]),
                "max_conservation_defect": float(defect.max()),
                "min_value": float(sol.min_value_curve.min()),
                "moments": table}

    def run_malliavin(self) -> dict:
        cfg = self.cfg
        lam = cfg.malliavin_lambda
        if lam is None:
            lam = self.preset.ellipticity_lambda or 0.0
        n_paths = cfg.malliavin_paths
        bundle = simulate_interacting(self.model, self.law, self.grid,
                                      n_paths, cfg.seed)
        flow = bundle.realized_flow
        last = self.grid.steps

        def work(i: int):
            path = bundle.path(i)
            fv = simulate_first_variation(self.model, path, flow)
            res = float(zy_residual(fv).max())
            cov = covariance_curve(fv, path, self.model, flow, lam=lam)[last]
            rep = ellipticity_bound_check(cov, slack_factor=cfg.malliavin_slack)
            return (cov.lambda_min, cov.gamma, rep.bound, rep.margin,
                    rep.holds, res)

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                rows = list(ex.map(work, range(n_paths)))
        else:
            rows = [work(i) for i in range(n_paths)]

        d = self._dir("malliavin")
        _write_csv(d / "paths.csv", "path,lambda_min,gamma,bound,margin,holds,zy_max",
                   [(i, float(r[0]), float(r[1]), float(r[2]), float(r[3]),
                     int(r[4]), float(r[5])) for i, r in enumerate(rows)])
        all_hold = all(r[4] for r in rows)
        return {"status": "ok", "n_paths": n_paths, "lambda": float(lam),
                "lambda_degenerate": lam <= 0.0,
                "min_lambda_min": float(min(r[0] for r in rows)),
                "min_margin": float(min(r[3] for r in rows)),
                "max_zy_residual": float(max(r[5] for r in rows)),
                "all_bounds_hold": bool(all_hold)}

    def comparisons(self) -> dict:
        out: dict = {}
        for t in self.snapshot_times:
            entry: dict = {}
            fp_snap = None
            if self.fp is not None:
                for p in self.fp.snapshots:
                    if p.time == t:
                        fp_snap = p
            cloud = None
            if self.bundle is not None:
                cloud = self.bundle.snapshot(self.grid.index_of(t))
            if cloud is not None and fp_snap is not None:
                if self.model.d == 1:
                    entry["l1_kde_vs_fp"] = l1_grid_distance(
                        kde_1d(cloud, self.axes[0], time=t), fp_snap)
                    entry["w2_particles_vs_fp"] = w2_cloud_vs_density_1d(cloud, fp_snap)
                else:
                    for i in range(2):
                        entry[f"l1_kde_vs_fp_x{i + 1}"] = l1_grid_distance(
                            kde_1d(_marginal_cloud(cloud, i), self.axes[i], time=t),
                            grid_marginal(fp_snap, i))
            if cloud is not None and self.picard is not None \
                    and t in self.picard.checkpoint_times:
                mu = self.picard.final_clouds[self.picard.checkpoint_times.index(t)]
                if self.model.d == 1:
                    entry["w2_particles_vs_picard"] = w2_empirical_1d(cloud, mu)
                else:
                    entry["w2_particles_vs_picard"] = w2_sliced(
                        cloud, mu, n_slices=self.cfg.picard_n_slices, seed=0)
            if entry:
                out[_tkey(t)] = entry
        return out


def run_experiment(config, outdir=None, threads=None, seed=None,
                   as_printed=None) -> dict:
    """Run the configured methods, write artifacts, and return the report.

    ``config`` is an ExperimentConfig, a raw dict, or a path to a JSON file.
    Keyword overrides take precedence over the config document.  A method
    failure is recorded under ``methods.<name>.status`` and does not stop the
    remaining methods.
    """
    if isinstance(config, (str, Path)):
        cfg = ExperimentConfig.from_file(config)
    elif isinstance(config, dict):
        cfg = ExperimentConfig.from_dict(config)
    else:
        cfg = config
    if seed is not None:
        if not 0 <= seed < 1 << 63:
            raise ConfigError("seed must be in [0, 2**63)", field_path="seed")
        cfg.seed = int(seed)
    if as_printed is not None:
        cfg.as_printed = bool(as_printed)
    if threads is None:
        threads = cfg.threads
    out = outdir if outdir is not None else cfg.outdir
    if out is None:
        out = os.environ.get(_ENV_OUTDIR, "mvsim-out")
    out = Path(out)

    exp = _Experiment(cfg, out, threads)
    runners = {"particles": exp.run_particles, "picard": exp.run_picard,
               "fp": exp.run_fp, "malliavin": exp.run_malliavin}
    methods: dict = {}
    # dependency order; fp independent but cheap to keep deterministic order
    for name in _METHODS:
        if name not in cfg.methods:
            continue
        try:
            methods[name] = runners[name]()
        except Exception as e:  # recorded, not fatal to the rest
            methods[name] = {"status": "failed",
                             "error": f"{type(e).__name__}: {e}"}
    frag = methods.get("malliavin")
    if frag and frag["status"] == "ok" and frag["lambda"] > 0 \
            and not frag["all_bounds_hold"]:
        frag["status"] = "failed"
        frag["error"] = "ellipticity bound violated on at least one path"

    echo = {k: v for k, v in cfg.raw.items() if k not in ("outdir", "threads")}
    echo["seed"] = cfg.seed
    echo["as_printed"] = cfg.as_printed
    report = {
        "config": echo,
        "preset": {"name": exp.preset.name, "summary": exp.preset.summary,
                   "params": {k: exp.preset.params[k]
                              for k in sorted(exp.preset.params)}},
        "environment": {"python": platform.python_version(),
                        "numpy": np.__version__, "scipy": scipy.__version__},
        "snapshot_times": [float(t) for t in exp.snapshot_times],
        "methods": methods,
        "comparisons": exp.comparisons(),
    }
    exp.base.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"
    _publish(exp.base / "report.json", lambda p: Path(p).write_text(text))
    return report
