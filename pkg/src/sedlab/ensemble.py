"""Monte Carlo driver: realizations, aggregation, T-sweeps and scaling fits."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import linearized as lin
from .errors import (EnsembleError, InvalidParameterError, NonConvergenceError, ResourceError,
                     UndefinedStatisticError)
from .lattice import Grid, rasterize
from .pointgen import sample_hardcore_poisson, sample_random_parking
from .solver import (OperatorSpec, effective_field_box, green_decay_slope, green_function,
                     identity_defects, solve_corrector)

log = logging.getLogger(__name__)

MODES = ("nonlinear", "linearized", "green", "divform")
THREADS_ENV = "SEDLAB_THREADS"
# peak float64 arrays held per cell, by mode (measured on the reference runs, rounded up)
_ARRAYS_PER_CELL = {"nonlinear": 16, "green": 16, "linearized": 8, "divform": 8}


@dataclass(frozen=True)
class RunConfig:
    d: int = 3
    n: int = 32
    h: float = 0.25
    T: float = 64.0
    rho: float = 3.0
    lam: Optional[float] = 1.0  # None selects random parking
    gbar: float = 1.0
    realizations: int = 1
    master_seed: int = 0
    cg_tol: float = 1e-10
    cg_maxit: Optional[int] = None
    preconditioner: str = "spectral"
    box_rule: float = 8.0
    scaling_claim: bool = False
    mode: str = "nonlinear"
    strict_raster: bool = True
    direction: int = 0
    green_r_min: float = 4.0
    green_r_max: float = 24.0
    green_clearance: float = 2.0
    memory_budget_mb: float = 3000.0

    def __post_init__(self):
        if self.d < 2:
            raise InvalidParameterError(f"d must be >= 2, got {self.d}")
        if not self.T > 0:
            raise InvalidParameterError(f"T must be positive, got {self.T}")
        if self.realizations < 1:
            raise InvalidParameterError("need at least one realization")
        if self.mode not in MODES:
            raise InvalidParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam is not None and self.lam < 0:
            raise InvalidParameterError("lambda must be nonnegative")

    @property
    def L(self) -> float:
        return self.n * self.h

    @property
    def grid(self) -> Grid:
        return Grid(self.d, self.n, self.h)

    def to_dict(self) -> dict:
        return asdict(self)

    def check_box_rule(self):
        """Raise unless the box resolves the screening length (``L >= box_rule * sqrt(T)``)."""
        if self.L < self.box_rule * math.sqrt(self.T) - 1e-9:
            raise InvalidParameterError(
                f"L={self.L} < box_rule*sqrt(T)={self.box_rule * math.sqrt(self.T):.3f}")


@dataclass
class EnsembleStats:
    """Aggregated statistics of one ensemble.

    ``var_ui`` is the pooled variance of the inclusion values in nonlinear
    mode and the box average of ``v_T^2`` in linearized mode.  In divform
    mode it holds the box average of ``w_T^2``.
    """

    T: float
    L: float
    n: int
    realizations_used: int
    u_bar: float = math.nan
    u_bar_se: float = math.nan
    var_ui: float = math.nan
    var_ui_se: float = math.nan
    mean_energy_dirichlet: float = math.nan
    mean_energy_dirichlet_se: float = math.nan
    mean_energy_massive: float = math.nan
    identity_mean0: float = math.nan
    identity_energy: float = math.nan
    green_slope: float = math.nan
    green_slope_se: float = math.nan
    degenerate: int = 0
    warnings: list = field(default_factory=list)

    def row(self) -> dict:
        return {col: getattr(self, _CSV_FIELDS.get(col, col)) for col in CSV_COLUMNS}


CSV_COLUMNS = ("T", "L", "n", "realizations", "u_bar", "u_bar_se", "var_ui", "var_ui_se",
               "energy_dirichlet", "identity_mean0", "identity_energy")
_CSV_FIELDS = {"realizations": "realizations_used", "energy_dirichlet": "mean_energy_dirichlet"}


def realization_seed(master_seed: int, r: int, t_index: int = 0) -> int:
    """64-bit seed for realization ``r`` of sweep entry ``t_index``.

    ``SeedSequence(master_seed, spawn_key=(t_index, r))`` hashed to two 32-bit words.
    """
    words = np.random.SeedSequence(master_seed, spawn_key=(t_index, r)).generate_state(2)
    return int(words[0]) << 32 | int(words[1])


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _points(cfg: RunConfig, seed: int):
    if cfg.lam is None:
        return sample_random_parking(cfg.d, cfg.L, cfg.rho, seed)
    return sample_hardcore_poisson(cfg.d, cfg.L, cfg.rho, cfg.lam, seed)


def _green_source(geom, grid: Grid, clearance: float, seed: int):
    """First random fluid cell at distance >= clearance from every inclusion center."""
    rng = np.random.default_rng(seed)
    for _ in range(10_000):
        cell = rng.integers(0, grid.n, grid.d)
        if geom.n_inclusions == 0:
            return cell
        ctr = (cell + 0.5) * grid.h
        dx = geom.centers - ctr
        dx -= grid.L * np.round(dx / grid.L)
        if np.min(np.linalg.norm(dx, axis=1)) >= clearance and \
                geom.labels[tuple(cell)] < 0:
            return cell
    raise EnsembleError("no admissible Green source cell found", seed)


def run_realization(cfg: RunConfig, seed: int) -> dict:
    """Sample, rasterize and solve one realization; return its per-box statistics."""
    ps = _points(cfg, seed)
    grid = cfg.grid
    geom = rasterize(ps, grid, strict=cfg.strict_raster)
    vol = grid.L ** grid.d
    out = {"seed": seed, "inclusions": geom.n_inclusions, "theta_h": geom.theta_h}
    if cfg.mode == "nonlinear":
        spec = OperatorSpec(geom, cfg.T)
        if geom.n_inclusions == 0:
            out.update(u_values=np.empty(0), degenerate=True, energy_dirichlet=0.0,
                       energy_massive=0.0, mean0=0.0, energy_identity=0.0)
            return out
        try:
            res = solve_corrector(spec, cfg.gbar, cfg.cg_tol, cfg.cg_maxit, cfg.preconditioner)
        except NonConvergenceError as exc:
            raise EnsembleError(f"solve failed for seed {seed}: {exc}", seed) from exc
        defects = identity_defects(spec, res, cfg.gbar)
        out.update(u_values=res.inclusion_values, u_bar=effective_field_box(res, geom),
                   energy_dirichlet=res.energy_dirichlet / vol,
                   energy_massive=res.energy_massive / vol, mean0=defects["mean0"],
                   energy_identity=defects["energy"], iterations=res.iterations,
                   degenerate=False)
    elif cfg.mode == "linearized":
        v = lin.solve_linearized_fft(grid, geom, cfg.T)
        e = lin.coulomb_energy(v, grid, cfg.T)
        out.update(v2=float(np.mean(v.values ** 2)), energy_dirichlet=e["dirichlet"],
                   energy_massive=e["massive"], degenerate=geom.n_inclusions == 0)
    elif cfg.mode == "divform":
        w = lin.solve_divform_fft(grid, geom, cfg.T, cfg.direction)
        e = lin.coulomb_energy(w, grid, cfg.T)
        out.update(v2=float(np.mean(w.values ** 2)), energy_dirichlet=e["dirichlet"],
                   energy_massive=e["massive"], degenerate=geom.n_inclusions == 0)
    else:
        spec = OperatorSpec(geom, cfg.T)
        cell = _green_source(geom, grid, cfg.green_clearance, seed)
        try:
            G = green_function(spec, cell, cfg.cg_tol, cfg.cg_maxit, cfg.preconditioner,
                               min_distance=cfg.green_clearance)
        except NonConvergenceError as exc:
            raise EnsembleError(f"green solve failed for seed {seed}: {exc}", seed) from exc
        out.update(slope=green_decay_slope(spec, G, cell, cfg.green_r_min, cfg.green_r_max),
                   degenerate=False)
    return out


def _se(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan


def pooled_variance(groups) -> float:
    allv = np.concatenate([np.asarray(g, dtype=float) for g in groups])
    if len(allv) < 2:
        return math.nan
    return float(np.var(allv, ddof=1))


def jackknife_se(groups, stat) -> float:
    """Delete-one-realization jackknife standard error of ``stat(groups)``."""
    k = len(groups)
    if k < 2:
        return math.nan
    reps = np.array([stat(groups[:i] + groups[i + 1:]) for i in range(k)])
    return float(math.sqrt((k - 1) / k * np.sum((reps - reps.mean()) ** 2)))


def estimate_memory_mb(cfg: RunConfig) -> float:
    return cfg.n ** cfg.d * 8 * _ARRAYS_PER_CELL[cfg.mode] / 2**20


def aggregate(cfg: RunConfig, results: list) -> EnsembleStats:
    stats = EnsembleStats(T=cfg.T, L=cfg.L, n=cfg.n, realizations_used=0)
    good = [r for r in results if not r["degenerate"]]
    stats.degenerate = len(results) - len(good)
    if stats.degenerate:
        msg = f"{stats.degenerate} realization(s) without inclusions excluded"
        stats.warnings.append(msg)
        log.warning(msg)
    stats.realizations_used = len(good)
    if cfg.mode == "nonlinear":
        if not good:
            raise UndefinedStatisticError("no realization contains an inclusion")
        ubars = [r["u_bar"] for r in good]
        stats.u_bar, stats.u_bar_se = float(np.mean(ubars)), _se(ubars)
        groups = [r["u_values"] for r in good]
        stats.var_ui = pooled_variance(groups)
        stats.var_ui_se = jackknife_se(groups, pooled_variance)
        stats.identity_mean0 = max(r["mean0"] for r in good)
        stats.identity_energy = max(r["energy_identity"] for r in good)
    elif cfg.mode in ("linearized", "divform"):
        used = good or results
        v2 = [r["v2"] for r in used]
        stats.var_ui, stats.var_ui_se = float(np.mean(v2)), _se(v2)
    else:
        slopes = [r["slope"] for r in good]
        stats.green_slope, stats.green_slope_se = float(np.mean(slopes)), _se(slopes)
    if cfg.mode != "green" and good:
        ed = [r["energy_dirichlet"] for r in good]
        stats.mean_energy_dirichlet, stats.mean_energy_dirichlet_se = float(np.mean(ed)), _se(ed)
        stats.mean_energy_massive = float(np.mean([r["energy_massive"] for r in good]))
    return stats


def run_ensemble(cfg: RunConfig, workers: Optional[int] = None, t_index: int = 0,
                 keep_realizations: bool = False):
    """Run ``cfg.realizations`` independent realizations and aggregate them.

    Realizations may run on several threads; results are aggregated in
    realization order, so the output does not depend on ``workers``.
    """
    if cfg.scaling_claim:
        cfg.check_box_rule()
    if estimate_memory_mb(cfg) > cfg.memory_budget_mb:
        raise ResourceError(f"grid n={cfg.n}, d={cfg.d} needs ~{estimate_memory_mb(cfg):.0f} MB")
    seeds = [realization_seed(cfg.master_seed, r, t_index) for r in range(cfg.realizations)]
    workers = workers or worker_count()
    if workers == 1 or len(seeds) == 1:
        results = [run_realization(cfg, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: run_realization(cfg, s), seeds))
    stats = aggregate(cfg, results)
    return (stats, results) if keep_realizations else stats


def config_for_T(cfg: RunConfig, T: float) -> RunConfig:
    """Copy of ``cfg`` at screening ``T`` with the box enlarged to obey the box rule."""
    need = cfg.box_rule * math.sqrt(T)
    n = max(cfg.n, int(math.ceil(need / cfg.h - 1e-9)))
    return replace(cfg, T=float(T), n=n)


def sweep_T(cfg: RunConfig, T_list, workers: Optional[int] = None) -> list:
    """One ensemble per ``T``; returns ``[(T, EnsembleStats), ...]``."""
    T_list = [float(t) for t in T_list]
    if not T_list or any(b <= a for a, b in zip(T_list, T_list[1:])) or T_list[0] <= 0:
        raise InvalidParameterError("T_list must be strictly increasing and positive")
    cfgs = [config_for_T(cfg, T) for T in T_list]
    for c in cfgs:
        if estimate_memory_mb(c) > c.memory_budget_mb:
            raise ResourceError(
                f"T={c.T}: grid n={c.n}, d={c.d} needs ~{estimate_memory_mb(c):.0f} MB "
                f"(budget {c.memory_budget_mb:.0f} MB)")
    return [(c.T, run_ensemble(c, workers, t_index=i)) for i, c in enumerate(cfgs)]


@dataclass(frozen=True)
class ScalingFit:
    inputs: tuple
    exponent: float
    power_r2: float
    log_slope: float
    log_intercept: float
    log_fit_r2: float
    which: str

    def to_dict(self) -> dict:
        out = asdict(self)
        out["inputs"] = [list(p) for p in self.inputs]
        return out


def _r2(y, yhat) -> float:
    ss = float(np.sum((y - np.mean(y)) ** 2))
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss if ss > 0 else 1.0


def fit_scaling(points, kind: str = "power") -> ScalingFit:
    """Least-squares growth fits of ``y`` against ``T``.

    Both diagnostics are always computed: the log-log slope (power law) and
    the linear fit of ``y`` against ``log T``.  ``kind`` records which one the
    caller treats as primary.
    """
    if kind not in ("power", "logarithmic"):
        raise InvalidParameterError(f"kind must be 'power' or 'logarithmic', got {kind!r}")
    pts = [(float(t), float(y)) for t, y in points]
    if len(pts) < 3:
        raise InvalidParameterError("need at least 3 points to fit a scaling law")
    T = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(T <= 0) or np.any(y <= 0):
        raise InvalidParameterError("scaling fits need positive T and y")
    lt, ly = np.log(T), np.log(y)
    a, b = np.polyfit(lt, ly, 1)
    c, e = np.polyfit(lt, y, 1)
    return ScalingFit(tuple(pts), float(a), _r2(ly, a * lt + b), float(c), float(e),
                      _r2(y, c * lt + e), kind)


def growth_regime(fit: ScalingFit, max_exponent: float = 0.15, min_r2: float = 0.9) -> str:
    """``"logarithmic"`` when the power exponent is small and ``y`` is linear in ``log T``."""
    if fit.exponent <= max_exponent and fit.log_fit_r2 >= min_r2:
        return "logarithmic"
    return "power"
