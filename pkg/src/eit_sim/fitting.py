"""Least-squares estimation of model parameters from transmission spectra.

Every objective evaluation runs the full swept simulation.  The optimiser is
a bounded Nelder-Mead simplex working in coordinates scaled to the unit box
``[0, 1]**n`` given by the parameter bounds; trial points are projected onto
the box.  Uncertainties come from a finite-difference Hessian of the SSE at
the optimum.
"""

from __future__ import annotations

import dataclasses
import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import IllPosedProblemError, IntegrationError, InvalidParameterError
from .integrator import SolverOptions, evolve
from .model import SystemParams, SweepProgram
from .spectroscopy import Spectrum, spectrum_from_trajectory, transmission

OFFSET = "detuning_offset_MHz"
_PARAM_NAMES = {f.name for f in dataclasses.fields(SystemParams)} - {"dephase_32"}


@dataclass(frozen=True)
class FreeParameter:
    name: str
    initial: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.name not in _PARAM_NAMES | {OFFSET}:
            raise InvalidParameterError(f"cannot fit unknown parameter {self.name!r}")
        if not self.lower <= self.initial <= self.upper or not self.lower < self.upper:
            raise InvalidParameterError(
                f"{self.name}: need lower <= initial <= upper with lower < upper")


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Data plus the parameters to adjust.

    Values of SystemParams fields are in internal units (rad/us); the
    detuning offset is in MHz and shifts the model's detuning axis.
    """

    data: Spectrum
    free: tuple
    fixed: SystemParams
    sweep: SweepProgram = field(default_factory=SweepProgram)
    solver: SolverOptions = field(default_factory=SolverOptions)
    seed: int = 0

    def __post_init__(self):
        names = [f.name for f in self.free]
        if len(set(names)) != len(names):
            raise InvalidParameterError(f"duplicate free parameters: {names}")
        if not names:
            raise InvalidParameterError("no free parameters")

    @property
    def names(self):
        return [f.name for f in self.free]

    def apply(self, values):
        """SystemParams and detuning offset for a {name: value} mapping."""
        offset = values.get(OFFSET, 0.0)
        changes = {k: v for k, v in values.items() if k != OFFSET}
        return self.fixed.replace(**changes), offset


@dataclass
class FitResult:
    values: dict
    uncertainties: dict
    sse: float
    n_iter: int
    n_eval: int
    converged: bool
    params: SystemParams
    history: list = field(default_factory=list)
    start_sse: list = field(default_factory=list)

    @property
    def detuning_offset_MHz(self):
        return self.values.get(OFFSET, 0.0)


class CandidateFailed(IntegrationError):
    def __init__(self, err, candidate):
        super().__init__(f"{err.args[0]} for candidate {candidate}", err.t_last)
        self.candidate = candidate


@functools.lru_cache(maxsize=256)
def _simulate(params, sweep, solver):
    # od0 does not enter the dynamics; callers normalise it away for caching
    return evolve(params, sweep, solver)


def model_spectrum(params, sweep, solver):
    traj = _simulate(params.replace(od0=1.0), sweep, solver)
    return spectrum_from_trajectory(traj, params)


def _model_on_data_grid(params, offset, problem):
    model = model_spectrum(params, problem.sweep, problem.solver)
    data = problem.data
    out = np.empty(len(data))
    for d in data.directions:
        m = model.segment(d)
        if len(m) == 0:
            raise InvalidParameterError(f"model has no {d} segment to compare with")
        x = m.detuning_MHz + offset
        order = np.argsort(x, kind="stable")
        sel = data.direction == d
        out[sel] = np.interp(data.detuning_MHz[sel], x[order], m.transmission[order])
    return out


def residuals(candidate, problem):
    """Model minus data transmission at every data row."""
    params, offset = problem.apply(candidate)
    try:
        model = _model_on_data_grid(params, offset, problem)
    except IntegrationError as err:
        raise CandidateFailed(err, dict(candidate)) from err
    return model - problem.data.transmission


def sse(candidate, problem):
    r = residuals(candidate, problem)
    return float(r @ r)


# --------------------------------------------------------------------------
# bounded Nelder-Mead

def _initial_simplex(x0, step):
    simplex = [x0]
    for k in range(x0.size):
        v = x0.copy()
        v[k] = v[k] + step if v[k] + step <= 1.0 else v[k] - step
        simplex.append(v)
    return np.array(simplex)


def nelder_mead(fun, x0, step=0.05, max_iter=2000, f_rtol=1e-12, x_rtol=1e-6, max_restarts=3,
                restart_step=0.005):
    """Minimise *fun* over the unit box starting from *x0*.

    Trial points are clipped to the box.  Clipping can flatten the simplex
    onto a face, so if any point was clipped the simplex is rebuilt around
    the best point on convergence; the result is accepted once a fresh
    simplex brings no further improvement beyond *f_rtol*.

    Returns ``(x_best, f_best, n_iter, n_eval, converged, history)`` where
    *history* holds the best value after every iteration.
    """
    n = x0.size
    clipped = False

    def clip(v):
        nonlocal clipped
        c = np.clip(v, 0.0, 1.0)
        clipped = clipped or not np.array_equal(c, v)
        return c

    simplex = _initial_simplex(np.clip(np.asarray(x0, dtype=float), 0.0, 1.0), step)
    fvals = np.array([fun(v) for v in simplex])
    n_eval = n + 1
    history = []
    converged = False
    restarts = 0
    f_at_restart = np.inf
    it = 0
    while it < max_iter:
        it += 1
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        history.append(float(fvals[0]))
        if (fvals[-1] - fvals[0] < f_rtol * (1.0 + abs(fvals[0]))
                or np.max(np.abs(simplex[1:] - simplex[0])) < x_rtol):
            if (not clipped or restarts >= max_restarts
                    or f_at_restart - fvals[0] <= f_rtol * (1.0 + abs(fvals[0]))):
                converged = True
                break
            restarts += 1
            clipped = False
            f_at_restart = fvals[0]
            best = simplex[0].copy()
            simplex = _initial_simplex(best, restart_step)
            fvals = np.concatenate([[fvals[0]], [fun(v) for v in simplex[1:]]])
            n_eval += n
            continue
        centroid = simplex[:-1].mean(axis=0)
        xr = clip(centroid + (centroid - simplex[-1]))
        fr = fun(xr)
        n_eval += 1
        if fr < fvals[0]:
            xe = clip(centroid + 2.0 * (centroid - simplex[-1]))
            fe = fun(xe)
            n_eval += 1
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = clip(centroid + 0.5 * (xr - centroid))
            else:
                xc = clip(centroid + 0.5 * (simplex[-1] - centroid))
            fc = fun(xc)
            n_eval += 1
            if fc < min(fr, fvals[-1]):
                simplex[-1], fvals[-1] = xc, fc
            else:
                for k in range(1, n + 1):
                    simplex[k] = simplex[0] + 0.5 * (simplex[k] - simplex[0])
                    fvals[k] = fun(simplex[k])
                n_eval += n
    order = np.argsort(fvals, kind="stable")
    return simplex[order[0]], float(fvals[order[0]]), it, n_eval, converged, history


def _threads():
    env = os.environ.get("EIT_SIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def fit(problem, n_starts=5, max_iter=2000, jitter=0.1, step=0.05, uncertainties=True):
    """Multi-start bounded simplex fit; the best start wins.

    Start 0 is the supplied initial guess; further starts are jittered
    uniformly by ``jitter`` of each parameter range using ``problem.seed``.
    """
    data = problem.data
    if len(data) < 2 * len(problem.free):
        raise IllPosedProblemError(
            f"{len(data)} data points for {len(problem.free)} free parameters")
    if np.ptp(data.transmission) == 0.0:
        raise IllPosedProblemError("data transmission is constant")
    lo = np.array([f.lower for f in problem.free])
    hi = np.array([f.upper for f in problem.free])
    span = hi - lo
    names = problem.names

    def to_values(u):
        return dict(zip(names, (lo + span * u).tolist()))

    def objective(u):
        return sse(to_values(u), problem)

    u0 = (np.array([f.initial for f in problem.free]) - lo) / span
    rng = np.random.default_rng(problem.seed)
    starts = [u0] + [np.clip(u0 + rng.uniform(-jitter, jitter, u0.size), 0, 1)
                     for _ in range(n_starts - 1)]
    run = functools.partial(nelder_mead, objective, step=step, max_iter=max_iter)
    workers = min(_threads(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    best = min(range(len(results)), key=lambda k: (results[k][1], k))
    u, f, n_iter, _, converged, history = results[best]
    values = to_values(u)
    unc = curvature_uncertainties(problem, values) if uncertainties else {}
    params, _ = problem.apply(values)
    return FitResult(values=values, uncertainties=unc, sse=f, n_iter=n_iter,
                     n_eval=sum(r[3] for r in results), converged=converged, params=params,
                     history=history, start_sse=[r[1] for r in results])


def curvature_uncertainties(problem, values, rel_step=1e-3):
    """1-sigma errors from the SSE Hessian: cov = 2 s^2 H^-1, s^2 = SSE/(N-p)."""
    names = problem.names
    bounds = {f.name: (f.lower, f.upper) for f in problem.free}
    x = np.array([values[n] for n in names])
    h = np.array([rel_step * (bounds[n][1] - bounds[n][0]) for n in names])
    p = x.size

    def f(v):
        return sse(dict(zip(names, v)), problem)

    f0 = f(x)
    H = np.empty((p, p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(p)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej)
                                 + f(x - ei - ej)) / (4 * h[i] * h[j])
    dof = max(len(problem.data) - p, 1)
    try:
        cov = 2.0 * (f0 / dof) * np.linalg.inv(H)
        diag = np.diag(cov)
    except np.linalg.LinAlgError:
        diag = np.full(p, np.nan)
    return {n: (math.sqrt(d) if d > 0 else float("nan")) for n, d in zip(names, diag)}


# --------------------------------------------------------------------------
# synthetic data

def gaussian_noise(n, seed):
    """Standard normal deviates from PCG64 uniforms via Box-Muller.

    Uniforms are numpy's ``Generator(PCG64(seed)).random(2*n)``, i.e.
    ``(next_uint64 >> 11) * 2**-53``; pairs ``(u1, u2)`` map to
    ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.
    """
    u = np.random.Generator(np.random.PCG64(seed)).random(2 * n).reshape(n, 2)
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def synthesize_data(params, sweep=None, noise_sigma=0.0, seed=0, solver=None):
    """Forward simulation with optional Gaussian noise on the transmission."""
    if noise_sigma < 0:
        raise InvalidParameterError("noise_sigma must be >= 0")
    sweep = sweep or SweepProgram()
    solver = solver or SolverOptions()
    clean = model_spectrum(params, sweep, solver)
    if noise_sigma == 0:
        return clean
    noisy = clean.transmission + noise_sigma * gaussian_noise(len(clean), seed)
    return clean.with_transmission(np.clip(noisy, 1e-9, 1.0))


__all__ = [
    "FreeParameter", "FitProblem", "FitResult", "OFFSET", "residuals", "sse", "fit",
    "nelder_mead", "curvature_uncertainties", "synthesize_data", "gaussian_noise",
    "model_spectrum", "transmission", "calibrate_depopulation",
]


def calibrate_depopulation(params, sweep=None, solver=None, target_peak_pop3=0.03,
                           target_final_pop4=0.8, bounds=(1e-2, 1e5)):
    """Scalar fit of gamma3p to a peak Rydberg fraction and final reservoir fraction.

    Minimises the summed squared relative deviations of
    ``extract_peak_populations`` from the two targets over ``log(gamma3p)``.
    Returns ``(gamma3p, (max_pop3, final_pop4))``.
    """
    from scipy.optimize import minimize_scalar

    from .spectroscopy import extract_peak_populations

    sweep = sweep or SweepProgram()
    solver = solver or SolverOptions()

    def pops(g):
        return extract_peak_populations(_simulate(params.replace(gamma3p=g, od0=1.0), sweep,
                                                  solver))

    def cost(log_g):
        p3, p4 = pops(math.exp(log_g))
        return ((p3 - target_peak_pop3) / target_peak_pop3) ** 2 + \
            ((p4 - target_final_pop4) / target_final_pop4) ** 2

    res = minimize_scalar(cost, bounds=tuple(map(math.log, bounds)), method="bounded",
                          options={"xatol": 1e-4})
    g = math.exp(res.x)
    return g, pops(g)
