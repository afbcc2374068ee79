"""Command-line front end.

Every subcommand reads a flat ``key = value`` configuration (``--config FILE``)
whose keys may be overridden by ``--key value`` flags, writes its data files
into ``--out`` and finishes with one ``manifest.json`` listing every output with
its SHA-256.  Usage errors are reported before any file is written.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from . import linearized as lin
from .ensemble import (CSV_COLUMNS, RunConfig, fit_scaling, growth_regime, realization_seed,
                       run_ensemble, sweep_T, worker_count)
from .errors import InvalidParameterError, SedlabError
from .lattice import Grid, rasterize
from .oracles import dense_direct_solve, radial_massive_solve
from .pointgen import StopRule, sample_hardcore_poisson, sample_random_parking
from .solver import (OperatorSpec, assemble_rhs, effective_field_box, green_decay_slope,
                     green_function, identity_defects, solve_corrector)

COMMANDS = ("sample", "solve", "green", "linearized", "ensemble", "sweep", "oracle")


class UsageError(SedlabError):
    pass


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if str(text).strip().lower() in ("none", "") else float(text)


def _opt_int(text: str):
    return None if str(text).strip().lower() in ("none", "") else int(text)


def _float_list(text: str):
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


# key -> parser; RunConfig fields plus the few command-level keys
KEYS = {
    "d": int, "n": int, "h": float, "L": float, "T": float, "rho": float,
    "lambda": _opt_float, "parking": _bool, "gbar": float, "realizations": int,
    "master_seed": int, "seed": int, "cg_tol": float, "cg_maxit": _opt_int,
    "preconditioner": str, "box_rule": float, "scaling_claim": _bool, "mode": str,
    "strict_raster": _bool, "direction": int, "green_r_min": float, "green_r_max": float,
    "green_clearance": float, "memory_budget_mb": float, "T_list": _float_list,
    "fit": str, "streak": _opt_int, "horizon": _opt_float, "dump_field": _bool,
    "R_out": _opt_float, "nodes": int, "flux": str,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _convert(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in KEYS:
            raise UsageError(f"unknown configuration key {key!r}")
        try:
            out[key] = KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r}: {exc}") from exc
    return out


def _overrides(tokens: list) -> dict:
    raw = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_") if tok[2:] not in KEYS else tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise UsageError(f"missing value for {tok}") from None
        raw[key] = value
    return raw


def build_settings(config_path, tokens) -> dict:
    raw = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"config file {config_path} not found")
        raw.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    raw.update(_overrides(tokens))
    return _convert(raw)


def run_config(settings: dict, **forced) -> RunConfig:
    s = dict(settings)
    s.update(forced)
    kwargs = {}
    names = {f.name for f in fields(RunConfig)}
    for key, value in s.items():
        if key in names:
            kwargs[key] = value
    if "seed" in s:
        kwargs.setdefault("master_seed", s["seed"])
    if "lambda" in s:
        kwargs["lam"] = s["lambda"]
    if s.get("parking"):
        kwargs["lam"] = None
    if "L" in s:
        h = kwargs.get("h", RunConfig.h)
        n = int(round(s["L"] / h))
        if not math.isclose(n * h, s["L"], rel_tol=1e-9):
            raise UsageError(f"L={s['L']} is not a multiple of h={h}")
        kwargs["n"] = n
    try:
        cfg = RunConfig(**kwargs)
        Grid(cfg.d, cfg.n, cfg.h)
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.scaling_claim and not forced.get("_sweep"):
        try:
            cfg.check_box_rule()
        except InvalidParameterError as exc:
            raise UsageError(str(exc)) from exc
    return cfg


class Run:
    """Collects outputs, timings and warnings for the manifest."""

    def __init__(self, out: Path, command: str, settings: dict):
        self.out, self.command, self.settings = out, command, settings
        self.outputs, self.timings, self.warnings = [], {}, []
        self.report = {}
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.timings[name] = now - self._t
        self._t = now

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return self.out / name

    def finish(self, config: dict):
        manifest = {
            "tool": "sedlab", "version": __version__, "command": self.command,
            "config": config, "settings": self.settings, "timings": self.timings,
            "warnings": self.warnings, "report": self.report,
            "outputs": [{"file": f, "sha256": sio.sha256(self.out / f)} for f in self.outputs],
        }
        self.out.mkdir(parents=True, exist_ok=True)
        sio.write_json(self.out / "manifest.json", manifest)


def _points(cfg: RunConfig, seed: int, settings: dict):
    if cfg.lam is None:
        stop = StopRule(horizon=settings.get("horizon"), streak=settings.get("streak"))
        return sample_random_parking(cfg.d, cfg.L, cfg.rho, seed, stop)
    return sample_hardcore_poisson(cfg.d, cfg.L, cfg.rho, cfg.lam, seed)


def cmd_sample(settings, run: Run):
    cfg = run_config(settings)
    # point sets use the seed directly; solvers derive per-realization seeds
    ps = _points(cfg, cfg.master_seed, settings)
    run.stage("sample")
    sio.write_points_csv(run.path("points.csv"), ps.points, ps.d)
    run.report = ps.manifest()
    return cfg


def _single_geometry(cfg, settings):
    seed = realization_seed(cfg.master_seed, 0)
    ps = _points(cfg, seed, settings)
    return seed, ps, rasterize(ps, cfg.grid, strict=cfg.strict_raster)


def cmd_solve(settings, run: Run):
    cfg = run_config(settings)
    seed, ps, geom = _single_geometry(cfg, settings)
    run.stage("geometry")
    spec = OperatorSpec(geom, cfg.T)
    res = solve_corrector(spec, cfg.gbar, cfg.cg_tol, cfg.cg_maxit, cfg.preconditioner)
    run.stage("solve")
    report = res.report()
    report.update(seed=seed, geometry=geom.summary(), max_abs_u=float(np.max(np.abs(res.u))),
                  identities=identity_defects(spec, res, cfg.gbar))
    report["u_bar_box"] = effective_field_box(res, geom) if geom.n_inclusions else None
    if not geom.n_inclusions:
        run.warnings.append("no inclusions: effective field undefined")
    run.report = report
    if settings.get("dump_field", True):
        sio.write_field(run.path("field.clsf"), res.u, cfg.d, cfg.n)
    return cfg


def cmd_green(settings, run: Run):
    from .ensemble import _green_source
    cfg = run_config(settings, mode="green")
    seed, ps, geom = _single_geometry(cfg, settings)
    spec = OperatorSpec(geom, cfg.T)
    cell = _green_source(geom, cfg.grid, cfg.green_clearance, seed)
    G = green_function(spec, cell, cfg.cg_tol, cfg.cg_maxit, cfg.preconditioner,
                       min_distance=cfg.green_clearance)
    run.stage("solve")
    run.report = {"seed": seed, "source_cell": [int(c) for c in cell],
                  "geometry": geom.summary(),
                  "slope": green_decay_slope(spec, G, cell, cfg.green_r_min, cfg.green_r_max),
                  "target_exponent": 2 - cfg.d}
    if settings.get("dump_field", True):
        sio.write_field(run.path("green.clsf"), G, cfg.d, cfg.n)
    return cfg


def cmd_linearized(settings, run: Run):
    cfg = run_config(settings, strict_raster=settings.get("strict_raster", False))
    seed, ps, geom = _single_geometry(cfg, settings)
    grid = cfg.grid
    v = lin.solve_linearized_fft(grid, geom, cfg.T)
    w = lin.solve_divform_fft(grid, geom, cfg.T, cfg.direction)
    run.stage("solve")
    run.report = {"seed": seed, "geometry": geom.summary(),
                  "indicator": {"mean_square": float(np.mean(v.values ** 2)),
                                **lin.coulomb_energy(v, grid, cfg.T)},
                  "divform": {"mean_square": float(np.mean(w.values ** 2)),
                              **lin.coulomb_energy(w, grid, cfg.T)}}
    if settings.get("dump_field", True):
        sio.write_field(run.path("linearized.clsf"), v.values, cfg.d, cfg.n)
        sio.write_field(run.path("divform.clsf"), w.values, cfg.d, cfg.n)
    return cfg


def _stats_report(stats) -> dict:
    out = {k: getattr(stats, k) for k in stats.__dataclass_fields__ if k != "warnings"}
    return out


def cmd_ensemble(settings, run: Run):
    cfg = run_config(settings)
    stats = run_ensemble(cfg)
    run.stage("ensemble")
    run.warnings.extend(stats.warnings)
    sio.write_table(run.path("ensemble.csv"), [stats.row()], CSV_COLUMNS)
    run.report = _stats_report(stats)
    return cfg


def cmd_sweep(settings, run: Run):
    cfg = run_config(settings, _sweep=True)
    T_list = settings.get("T_list")
    if not T_list:
        raise UsageError("sweep needs T_list")
    kind = settings.get("fit", "power")
    if kind not in ("power", "logarithmic"):
        raise UsageError(f"fit must be 'power' or 'logarithmic', got {kind!r}")
    try:
        rows = sweep_T(cfg, T_list)
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from exc
    run.stage("sweep")
    for _, s in rows:
        run.warnings.extend(s.warnings)
    sio.write_table(run.path("sweep.csv"), [s.row() for _, s in rows], CSV_COLUMNS)
    report = {"rows": [_stats_report(s) for _, s in rows]}
    if len(rows) >= 3:
        fit = fit_scaling([(T, s.var_ui) for T, s in rows], kind)
        report["fit"] = fit.to_dict()
        report["fit"]["regime"] = growth_regime(fit)
        if cfg.mode == "nonlinear":
            report["fit"]["label"] = "consistency check (upper bounds only)"
    run.report = report
    return cfg


def cmd_oracle(settings, run: Run):
    cfg = run_config(settings)
    T = cfg.T
    R_out = settings.get("R_out") or 8 * math.sqrt(T)
    prof = radial_massive_solve(cfg.d, T, R_out, cfg.gbar, 0.0, settings.get("nodes", 2000),
                                flux=settings.get("flux", "total"))
    prof.to_csv(run.path("radial.csv"))
    # dense versus CG on a small two-dimensional geometry
    grid = Grid(2, 8, 0.25)
    from .pointgen import PointSet
    ps = PointSet(np.array([[0.6, 0.7]]), 3.0, grid.L, 2, 0, "manual")
    spec = OperatorSpec(rasterize(ps, grid, strict=False), T)
    b = assemble_rhs(spec, cfg.gbar)
    cg = solve_corrector(spec, cfg.gbar, 1e-12).u
    dense = dense_direct_solve(spec, b)
    run.stage("oracle")
    run.report = {"radial_residual": prof.residual, "radial_nodes": len(prof.radii),
                  "dense_vs_cg": float(np.linalg.norm(cg - dense) / np.linalg.norm(dense))}
    return cfg


HANDLERS = {"sample": cmd_sample, "solve": cmd_solve, "green": cmd_green,
            "linearized": cmd_linearized, "ensemble": cmd_ensemble, "sweep": cmd_sweep,
            "oracle": cmd_oracle}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = _Parser(prog="sedlab", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--out", default="sedlab-out", help="output directory")
    try:
        args, rest = parser.parse_known_args(argv)
        settings = build_settings(args.config, rest)
        out = Path(args.out)
        run = Run(out, args.command, settings)
        # validate everything that can be validated before producing files
        run_config(settings, _sweep=args.command == "sweep")
    except UsageError as exc:
        return _error("usage", str(exc), 2)
    try:
        cfg = HANDLERS[args.command](settings, run)
    except UsageError as exc:
        return _error("usage", str(exc), 2)
    except SedlabError as exc:
        return _error(type(exc).__name__, str(exc), 1)
    run.finish(cfg.to_dict())
    return 0


if __name__ == "__main__":
    sys.exit(main())
