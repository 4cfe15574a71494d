"""
Search Module

Constrained topography optimization for one permutation, exhaustive search
over every permutation of the layers, and the length / layer-count studies
built on top of them.

Per-permutation results are always stored by enumeration index and reduced
sequentially afterwards, so the outcome does not depend on the worker count.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

import hydro
from dynamics import Permutation, all_permutations
from errors import (
    CombinatorialLimitError,
    InfeasibleProfileError,
    PermutationError,
    PondTooDeepError,
    RacewayError,
    SearchFailedError,
)
from objective import Raceway, Regime, flat_vertical_average

logger = logging.getLogger(__name__)

MAX_ENUMERATED_LAYERS = 9
TIE_TOLERANCE = 1e-14
ACTIVE_TOLERANCE = 1e-8

# Optimal mixing permutations reported for Nz = 7, M = 5, in image notation.
REPORTED_PERMUTATIONS = {
    "fixed-L100": Permutation.parse("2-4-6-7-5-3-1"),
    "fixed-L10": Permutation.parse("1-3-4-5-6-7-2"),
    "fixed-L1": Permutation.parse("1-7-6-5-4-3-2"),
    "variable-L100": Permutation.parse("4-6-7-5-3-2-1"),
    "variable-L10": Permutation.parse("7-3-4-5-6-2-1"),
    "variable-L1": Permutation.parse("7-6-5-4-3-2-1"),
}

# Reported optimal coefficients (a1..aM, or a0..aM for the variable regime) and gains.
REPORTED_RESULTS = {
    "fixed-L100": {"regime": Regime.FIXED, "L": 100.0, "coefficients": (0.0123, 0.0119, 0.0097, 0.0080, 0.0067), "r1": 0.00148, "r2": 0.01070},
    "fixed-L10": {"regime": Regime.FIXED, "L": 10.0, "coefficients": (0.0147, 0.0074, 0.0050, 0.0037, 0.0030), "r1": 0.00089, "r2": 0.03542},
    "fixed-L1": {"regime": Regime.FIXED, "L": 1.0, "coefficients": (0.0017, 0.0009, 0.0006, 0.0004, 0.0003), "r1": 0.00001, "r2": 0.03453},
    "variable-L100": {"regime": Regime.VARIABLE, "L": 100.0, "coefficients": (0.3102, 0.0328, 0.0244, 0.0173, 0.0136, 0.0129), "r1": 0.00686, "r2": 0.04318},
    "variable-L10": {"regime": Regime.VARIABLE, "L": 10.0, "coefficients": (0.3160, 0.0236, 0.0117, 0.0078, 0.0058, 0.0048), "r1": 0.00232, "r2": 0.12299},
    "variable-L1": {"regime": Regime.VARIABLE, "L": 1.0, "coefficients": (0.3168, 0.0023, 0.0012, 0.0008, 0.0006, 0.0005), "r1": 0.00002, "r2": 0.12714},
}


def reported_permutation(name):
    """Look up a reported permutation by name, e.g. 'fixed-L100'."""
    try:
        return REPORTED_PERMUTATIONS[name]
    except KeyError:
        raise PermutationError(f"unknown reported permutation '{name}'; choose from {', '.join(REPORTED_PERMUTATIONS)}")


def reported_reference(regime, grid):
    """Reported experiment matching a regime and grid, or None."""
    if grid.Nz != 7 or grid.M != 5:
        return None
    for name, entry in REPORTED_RESULTS.items():
        if entry["regime"] is Regime(regime) and math.isclose(entry["L"], grid.L):
            return name, entry
    return None


@dataclass(frozen=True)
class OptimizationResult:
    """Best feasible iterate of one constrained topography optimization."""

    perm: Permutation
    profile: hydro.FourierProfile
    value: float
    initial_value: float
    iterations: int
    evaluations: int
    converged: bool
    message: str
    kkt_residual: float
    height_margin: float
    max_froude: float

    @property
    def feasible(self):
        return self.height_margin >= -ACTIVE_TOLERANCE


class _ScaledObjective:
    """
    -value / scale and its gradient for the minimizer, evaluated together.

    Keeps the best feasible point seen, so the caller can return it whatever
    the minimizer reports.
    """

    penalty = 1e3

    def __init__(self, raceway, perm, regime, scale):
        self.raceway = raceway
        self.perm = perm
        self.regime = regime
        self.scale = scale
        self.evaluations = 0
        self.best_theta = None
        self.best_report = None
        self._theta = None
        self._result = None

    def offer(self, theta, report):
        if report.height_margin < -ACTIVE_TOLERANCE:
            return
        if self.best_report is None or report.value > self.best_report.value:
            self.best_theta = np.array(theta, dtype=float)
            self.best_report = report

    def _evaluate(self, theta):
        if self._theta is not None and np.array_equal(theta, self._theta):
            return self._result
        self.evaluations += 1
        try:
            report = self.raceway.evaluate(self.perm, self.raceway.profile_from(theta, self.regime), self.regime)
        except (InfeasibleProfileError, PondTooDeepError) as e:
            logger.debug(f"Trial point outside the model domain: {e}")
            self._result = (self.penalty, np.zeros_like(theta))
        else:
            self.offer(theta, report)
            self._result = (-report.value / self.scale, -report.gradient / self.scale)
        self._theta = np.array(theta, dtype=float)
        return self._result

    def value(self, theta):
        return self._evaluate(theta)[0]

    def gradient(self, theta):
        return self._evaluate(theta)[1]


def _height_constraints(raceway, regime):
    """Node-wise linear constraints h(x_i) - h_floor >= 0 as (matrix, offset)."""
    basis = hydro.fourier_basis(raceway.grid)
    # Both end nodes only see a0.
    interior = basis[1:-1]
    if Regime(regime) is Regime.FIXED:
        return interior[:, 1:], raceway.params.a0 - raceway.height_floor
    return interior, -raceway.height_floor


def _kkt_residual(gradient, matrix, offset, theta, bounds):
    """Norm of the projected gradient over the active constraints, via non-negative least squares."""
    rows = [matrix[(matrix @ theta + offset) <= ACTIVE_TOLERANCE]]
    for k, (lower, upper) in enumerate(bounds or ()):
        unit = np.zeros_like(theta)
        unit[k] = 1.0
        if lower is not None and theta[k] - lower <= ACTIVE_TOLERANCE:
            rows.append(unit[None, :])
        if upper is not None and upper - theta[k] <= ACTIVE_TOLERANCE:
            rows.append(-unit[None, :])
    active = np.vstack(rows)
    if not active.shape[0]:
        return float(np.linalg.norm(gradient))
    _, residual = nnls(active.T, gradient)
    return float(residual)


def optimize_profile(perm, regime, raceway, init=None, ftol=1e-10, maxiter=500):
    """
    Maximize the objective over the topography for one permutation.

    SLSQP minimizes -value / |value(init)| subject to h(x_i) >= h_floor at every
    node, which is equivalent to h >= h_min together with Fr <= 1 - delta. The
    variable regime also bounds a0 below the biomass limit alpha2 / alpha3.

    Args:
        perm: Permutation
        regime: Regime
        raceway: objective.Raceway
        init: starting profile, defaults to the flat start
        ftol: SLSQP function tolerance
        maxiter: SLSQP iteration cap

    Returns:
        OptimizationResult: the best feasible iterate, never worse than init

    Raises:
        InfeasibleProfileError: if init violates a constraint
    """
    regime = Regime(regime)
    init = init if init is not None else raceway.initial_profile()
    start = raceway.evaluate(perm, init, regime)
    if start.height_margin < 0:
        heights = hydro.eval_height(init, raceway.grid)
        node = int(np.argmin(heights))
        raise InfeasibleProfileError(node, heights[node], reason=f"is below the floor {raceway.height_floor:.6g} m")

    theta0 = raceway.decision_vector(init, regime)
    matrix, offset = _height_constraints(raceway, regime)
    bounds = None
    if regime is Regime.VARIABLE:
        upper = raceway.depth_limit() * (1.0 - 1e-9)
        bounds = [(raceway.height_floor, upper)] + [(None, None)] * raceway.grid.M

    scale = abs(start.value) or 1.0
    objective = _ScaledObjective(raceway, perm, regime, scale)
    objective.offer(theta0, start)

    if theta0.size == 0:
        return OptimizationResult(
            perm=perm,
            profile=init,
            value=start.value,
            initial_value=start.value,
            iterations=0,
            evaluations=1,
            converged=True,
            message="no decision variables",
            kkt_residual=0.0,
            height_margin=start.height_margin,
            max_froude=start.max_froude,
        )

    constraints = [
        {
            "type": "ineq",
            "fun": lambda theta: matrix @ theta + offset,
            "jac": lambda theta: matrix,
        }
    ]
    solution = minimize(
        objective.value,
        theta0,
        jac=objective.gradient,
        method="SLSQP",
        bounds=bounds,
        constraints=constraints,
        options={"ftol": ftol, "maxiter": maxiter},
    )
    if not solution.success:
        logger.warning(f"Optimization for sigma={perm.label} did not converge: {solution.message}")

    best_theta = objective.best_theta
    best = objective.best_report
    kkt = _kkt_residual(-best.gradient / scale, matrix, offset, best_theta, bounds)
    logger.debug(
        f"sigma={perm.label}: value {best.value:.10g} after {solution.nit} iterations, "
        f"{objective.evaluations} evaluations, KKT residual {kkt:.3e}"
    )
    return OptimizationResult(
        perm=perm,
        profile=raceway.profile_from(best_theta, regime),
        value=best.value,
        initial_value=start.value,
        iterations=int(solution.nit),
        evaluations=objective.evaluations,
        converged=bool(solution.success),
        message=str(solution.message),
        kkt_residual=kkt,
        height_margin=best.height_margin,
        max_froude=best.max_froude,
    )


def enumerate_permutations(nz, allow_large=False):
    """
    All Nz! permutations in lexicographic order of their images.

    Raises:
        CombinatorialLimitError: Nz > 9 without allow_large
    """
    if nz > MAX_ENUMERATED_LAYERS and not allow_large:
        raise CombinatorialLimitError(
            f"Nz = {nz} means {math.factorial(nz)} permutations; pass the large-Nz override to enumerate them",
            nz=nz,
        )
    return all_permutations(nz)


@dataclass(frozen=True)
class SearchRow:
    perm_id: int
    perm: Permutation
    value: float
    feasible: bool
    iterations: int
    converged: bool
    coefficients: tuple
    kkt_residual: float
    message: str = ""


@dataclass(frozen=True)
class SearchResult:
    """Global best over the permutation set plus the per-permutation table."""

    regime: Regime
    best: OptimizationResult
    rows: list
    r1: float
    r2: float
    baselines: dict
    wall_time: float = field(default=0.0, compare=False)

    @property
    def best_permutation(self):
        return self.best.perm

    @property
    def cycles(self):
        return self.best.perm.cycle_notation()


# Worker state, set once per process by _init_worker.
_worker_context = {}


def _init_worker(raceway, regime):
    _worker_context["raceway"] = raceway
    _worker_context["regime"] = regime


def _optimize_task(task):
    perm_id, images = task
    raceway = _worker_context["raceway"]
    regime = _worker_context["regime"]
    perm = Permutation(images)
    try:
        result = optimize_profile(perm, regime, raceway)
    except RacewayError as e:
        logger.error(f"Permutation {perm.label} failed: {e}")
        return SearchRow(
            perm_id=perm_id,
            perm=perm,
            value=float("nan"),
            feasible=False,
            iterations=0,
            converged=False,
            coefficients=(),
            kkt_residual=float("nan"),
            message=str(e),
        )
    return SearchRow(
        perm_id=perm_id,
        perm=perm,
        value=result.value,
        feasible=result.feasible,
        iterations=result.iterations,
        converged=result.converged,
        coefficients=tuple(float(v) for v in raceway.decision_vector(result.profile, regime)),
        kkt_residual=result.kkt_residual,
        message="" if result.converged else result.message,
    )


def _select_best(rows):
    """Sequential reduction: strictly better by more than the tie tolerance wins, so the earliest sigma keeps ties."""
    best = None
    for row in rows:
        if not row.feasible or not np.isfinite(row.value):
            continue
        if best is None or row.value > best.value + TIE_TOLERANCE * abs(best.value):
            best = row
    return best


def gain_ratios(regime, raceway, best):
    """
    Gains of the optimum over its flat-topography baselines.

    Fixed volume compares with P_max and identity mixing at a = 0; the
    variable regime uses a~_f = [a0*, 0, .., 0] for both baselines.

    Returns:
        tuple: (r1, r2, {baseline name: value})
    """
    regime = Regime(regime)
    flat = hydro.FourierProfile.flat(best.profile.a0, raceway.grid.M)
    identity = Permutation.identity(raceway.grid.Nz)
    same = raceway.evaluate(best.perm, flat, regime, gradient=False).value
    unmixed = raceway.evaluate(identity, flat, regime, gradient=False).value
    return (
        (best.value - same) / same,
        (best.value - unmixed) / unmixed,
        {"same_permutation_flat": same, "identity_flat": unmixed},
    )


def search_best(regime, raceway, workers=1, allow_large=False, permutations=None):
    """
    Optimize the topography for every permutation and keep the global best.

    Args:
        regime: Regime
        raceway: objective.Raceway
        workers: process count, 1 runs in-process
        allow_large: lift the Nz <= 9 enumeration guard
        permutations: explicit candidate list instead of the full enumeration

    Returns:
        SearchResult

    Raises:
        SearchFailedError: if no permutation produced a feasible optimum
    """
    regime = Regime(regime)
    started = time.perf_counter()
    if regime is Regime.VARIABLE:
        # Solve once here instead of once per worker.
        raceway.compensation
    candidates = list(permutations) if permutations is not None else list(enumerate_permutations(raceway.grid.Nz, allow_large))
    tasks = [(perm_id, perm.images) for perm_id, perm in enumerate(candidates)]
    logger.info(f"Searching {len(tasks)} permutations ({regime.value} volume, L={raceway.grid.L:g}) with {workers} worker(s)")

    rows = [None] * len(tasks)
    report_every = max(1, len(tasks) // 10)
    if workers > 1:
        chunk = max(1, len(tasks) // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(raceway, regime)) as executor:
            for row in executor.map(_optimize_task, tasks, chunksize=chunk):
                rows[row.perm_id] = row
                if (row.perm_id + 1) % report_every == 0:
                    logger.info(f"{row.perm_id + 1}/{len(tasks)} permutations done")
    else:
        _init_worker(raceway, regime)
        for task in tasks:
            row = _optimize_task(task)
            rows[row.perm_id] = row
            if (row.perm_id + 1) % report_every == 0:
                logger.info(f"{row.perm_id + 1}/{len(tasks)} permutations done")

    winner = _select_best(rows)
    if winner is None:
        raise SearchFailedError(f"all {len(rows)} permutations failed", permutations=len(rows))
    failed = sum(1 for row in rows if not row.feasible)
    if failed:
        logger.warning(f"{failed} of {len(rows)} permutations failed or ended infeasible")

    best = optimize_profile(winner.perm, regime, raceway)
    r1, r2, baselines = gain_ratios(regime, raceway, best)
    elapsed = time.perf_counter() - started
    logger.info(f"Best sigma={best.perm.label} {best.perm.cycle_notation()} value {best.value:.10g}, r1={r1:.4%}, r2={r2:.4%}")

    reference = reported_reference(regime, raceway.grid)
    if reference is not None:
        name, entry = reference
        logger.info(
            f"Reported for {name}: sigma={REPORTED_PERMUTATIONS[name].label}, "
            f"coefficients {list(entry['coefficients'])}, r1={entry['r1']:.3%}, r2={entry['r2']:.3%}"
        )

    return SearchResult(
        regime=regime,
        best=best,
        rows=rows,
        r1=r1,
        r2=r2,
        baselines=baselines,
        wall_time=elapsed,
    )


@dataclass(frozen=True)
class SweepRow:
    L: float
    sigma: str
    cycles: str
    objective: float
    r1: float
    r2: float
    coefficients: tuple
    note: str = ""


def sweep_length(regime, lengths, params, workers=1, allow_large=False):
    """
    Run search_best at every lap length.

    Args:
        regime: Regime
        lengths: L values, m
        params: ModelParams, L is overridden per row
        workers: forwarded to search_best

    Returns:
        list: SweepRow per length, failures recorded with a note
    """
    regime = Regime(regime)
    rows = []
    for length in lengths:
        try:
            raceway = Raceway(params.with_overrides(L=float(length)))
            result = search_best(regime, raceway, workers=workers, allow_large=allow_large)
        except RacewayError as e:
            logger.error(f"Length {length:g} failed: {e}")
            rows.append(SweepRow(float(length), "", "", float("nan"), float("nan"), float("nan"), (), note=str(e)))
            continue
        rows.append(
            SweepRow(
                L=float(length),
                sigma=result.best.perm.label,
                cycles=result.cycles,
                objective=result.best.value,
                r1=result.r1,
                r2=result.r2,
                coefficients=tuple(float(v) for v in raceway.decision_vector(result.best.profile, regime)),
            )
        )
    return rows


def shift_permutation(nz):
    """Default family sigma(n) = n mod Nz + 1: every layer moves one level down, the bottom one returns to the top."""
    return Permutation([(n + 1) % nz for n in range(nz)])


@dataclass(frozen=True)
class ConvergenceRow:
    Nz: int
    sigma: str
    cycles: str
    objective: float
    flat_vertical_average: float
    note: str = ""


def nz_convergence(params, nz_values, mapping=None, optimize=False, regime=Regime.FIXED):
    """
    Objective as a function of the layer count for one permutation family.

    Args:
        params: ModelParams
        nz_values: layer counts to evaluate
        mapping: {Nz: Permutation}; when given, counts without an entry are skipped
        optimize: optimize the topography instead of using the flat one
        regime: Regime

    Returns:
        list: ConvergenceRow per requested Nz
    """
    regime = Regime(regime)
    rows = []
    reference = None
    for nz in nz_values:
        if mapping is not None and nz not in mapping:
            logger.warning(f"No permutation given for Nz = {nz}; skipped")
            rows.append(ConvergenceRow(nz, "", "", float("nan"), float("nan"), note="no permutation for this Nz"))
            continue
        perm = mapping[nz] if mapping is not None else shift_permutation(nz)
        try:
            raceway = Raceway(params.with_overrides(Nz=nz))
            if reference is None:
                reference = flat_vertical_average(raceway, regime)
            if optimize:
                value = optimize_profile(perm, regime, raceway).value
            else:
                value = raceway.evaluate(perm, raceway.initial_profile(), regime, gradient=False).value
        except RacewayError as e:
            logger.error(f"Nz = {nz} failed: {e}")
            rows.append(ConvergenceRow(nz, perm.label, perm.cycle_notation(), float("nan"), float("nan"), note=str(e)))
            continue
        logger.info(f"Nz = {nz}: sigma={perm.label} objective {value:.12g}")
        rows.append(ConvergenceRow(nz, perm.label, perm.cycle_notation(), value, reference))
    return rows
