"""Time propagation along a detuning sweep, and fixed-detuning steady states.

The propagator is a Dormand-Prince 5(4) embedded pair (FSAL, local
extrapolation) with a PI step-size controller, compiled with numba.  Each
monotone piece of the sweep is integrated separately so no step straddles
the turning point, where the detuning has a kink.  Output samples come from
cubic Hermite interpolation between accepted steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConvergenceError, IntegrationError, InvalidParameterError, StateValidityError
from .model import check_density_matrix, ground_state, pack, rhs_packed, unpack

ORDER = 5

# Dormand-Prince coefficients
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# 5th-order minus 4th-order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                                22 / 525, -1 / 40)

_OK, _UNDERFLOW, _BUDGET = 0, 1, 2


@numba.njit(cache=True, nogil=True, fastmath={'nsz', 'arcp', 'contract', 'reassoc'})
def _f(y, t, t0, dt_inv, da, dd, p, out):
    rhs_packed(y, da + dd * (t - t0) * dt_inv, p, p[5] * y[2], out)


@numba.njit(cache=True, nogil=True, fastmath={'nsz', 'arcp', 'contract', 'reassoc'})
def _dp5_segment(y0, p, t0, t1, da, db, rtol, atol, hmax, h0, fixed_h, max_steps, tout, yout):
    n = y0.size
    dt_inv = 1.0 / (t1 - t0)
    dd = db - da
    y = y0.copy()
    ynew = np.empty(n)
    yt = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    _f(y, t0, t0, dt_inv, da, dd, p, k1)
    nfev = 1
    nsteps = 0
    nrej = 0
    t = t0
    adaptive = fixed_h <= 0.0
    h = h0 if adaptive else fixed_h
    h_min = 1e-12 * (t1 - t0)
    err_prev = 1e-4
    kout = 0
    while kout < tout.size and tout[kout] <= t0:
        yout[kout, :] = y
        kout += 1
    while t < t1:
        if nsteps >= max_steps:
            return _BUDGET, t, nsteps, nrej, nfev
        last = False
        if t + h >= t1 or (not adaptive and t + 1.5 * h > t1):
            h = t1 - t
            last = True
        for i in range(n):
            yt[i] = y[i] + h * _A21 * k1[i]
        _f(yt, t + _C2 * h, t0, dt_inv, da, dd, p, k2)
        for i in range(n):
            yt[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
        _f(yt, t + _C3 * h, t0, dt_inv, da, dd, p, k3)
        for i in range(n):
            yt[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        _f(yt, t + _C4 * h, t0, dt_inv, da, dd, p, k4)
        for i in range(n):
            yt[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        _f(yt, t + _C5 * h, t0, dt_inv, da, dd, p, k5)
        for i in range(n):
            yt[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i]
                                + _A65 * k5[i])
        tn = t1 if last else t + h
        _f(yt, tn, t0, dt_inv, da, dd, p, k6)
        for i in range(n):
            ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i]
                                  + _B6 * k6[i])
        _f(ynew, tn, t0, dt_inv, da, dd, p, k7)
        nfev += 6
        if adaptive:
            acc = 0.0
            for i in range(n):
                e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i]
                         + _E7 * k7[i])
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                acc += (e / sc) ** 2
            err = np.sqrt(acc / n)
        else:
            err = 0.0
        if err <= 1.0:
            while kout < tout.size and tout[kout] <= tn:
                th = (tout[kout] - t) / h
                th2 = th * th
                th3 = th2 * th
                h00 = 2.0 * th3 - 3.0 * th2 + 1.0
                h10 = th3 - 2.0 * th2 + th
                h01 = -2.0 * th3 + 3.0 * th2
                h11 = th3 - th2
                for i in range(n):
                    yout[kout, i] = (h00 * y[i] + h10 * h * k1[i] + h01 * ynew[i]
                                     + h11 * h * k7[i])
                kout += 1
            t = tn
            for i in range(n):
                y[i] = ynew[i]
                k1[i] = k7[i]
            nsteps += 1
            if adaptive:
                e = max(err, 1e-10)
                fac = 0.9 * e ** (-0.7 / 5.0) * err_prev ** (0.4 / 5.0)
                h = h * min(5.0, max(0.2, fac))
                err_prev = e
        else:
            nrej += 1
            h = h * max(0.2, 0.9 * err ** (-0.2))
            if h < h_min:
                return _UNDERFLOW, t, nsteps, nrej, nfev
        if adaptive and h > hmax:
            h = hmax
    # last output point coincides with t1
    while kout < tout.size:
        yout[kout, :] = y
        kout += 1
    return _OK, t, nsteps, nrej, nfev


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and output sampling for :func:`evolve`.

    ``fixed_step`` (us) switches off error control and uses equal steps,
    rounded so that each sweep segment holds a whole number of them.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 1.0
    output_points: int = 801
    fixed_step: float | None = None
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidParameterError("rtol and atol must be > 0")
        if not self.max_step > 0:
            raise InvalidParameterError("max_step must be > 0")
        if self.output_points < 2:
            raise InvalidParameterError("output_points must be >= 2")
        if self.fixed_step is not None and not self.fixed_step > 0:
            raise InvalidParameterError("fixed_step must be > 0")


@dataclass(frozen=True)
class SolverStats:
    steps: int = 0
    rejected_steps: int = 0
    rhs_evals: int = 0


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution: times (us), detunings (rad/us), states (n, 4, 4)."""

    t: np.ndarray
    delta_p: np.ndarray
    states: np.ndarray
    stats: SolverStats = field(default_factory=SolverStats)

    def __len__(self):
        return self.t.size

    @property
    def populations(self):
        return np.real(np.diagonal(self.states, axis1=1, axis2=2))

    @property
    def sigma21(self):
        return self.states[:, 1, 0]


def _output_grid(sweep, points):
    grids = []
    for k, (t0, t1, _, _) in enumerate(sweep.segments()):
        g = np.linspace(t0, t1, points)
        grids.append(g if k == 0 else g[1:])
    return grids


def evolve(params, sweep, opts=None, initial=None):
    """Integrate the nonlinear Bloch equations along *sweep*.

    *initial* defaults to the optically pumped ground state |1><1|.
    """
    opts = opts or SolverOptions()
    sigma0 = ground_state() if initial is None else check_density_matrix(initial)
    p = params.as_array()
    y = pack(sigma0)
    grids = _output_grid(sweep, opts.output_points)
    blocks = []
    steps = rejected = nfev = 0
    for (t0, t1, da, db), grid in zip(sweep.segments(), grids):
        if opts.fixed_step is None:
            fixed = 0.0
        else:
            fixed = (t1 - t0) / max(1, round((t1 - t0) / opts.fixed_step))
        out = np.empty((grid.size, 10))
        h0 = min(opts.max_step, 1e-3 * (t1 - t0))
        status, t_last, ns, nr, nf = _dp5_segment(
            y, p, t0, t1, da, db, opts.rtol, opts.atol, opts.max_step, h0, fixed,
            opts.max_steps, grid, out)
        steps += ns
        rejected += nr
        nfev += nf
        if status == _UNDERFLOW:
            raise IntegrationError("step size underflow (problem too stiff for explicit pair)",
                                   t_last)
        if status == _BUDGET:
            raise IntegrationError(f"step budget of {opts.max_steps} exhausted", t_last)
        blocks.append(out)
        y = out[-1].copy()
    packed = np.concatenate(blocks)
    t = np.concatenate(grids)
    _check_packed(packed, t)
    return Trajectory(t=t, delta_p=np.asarray(sweep.detuning(t)), states=unpack(packed),
                      stats=SolverStats(steps, rejected, nfev))


def _check_packed(y, t, tol=1e-9):
    pops = y[:, :4]
    drift = np.abs(pops.sum(axis=1) - 1.0)
    bad = np.flatnonzero((drift > tol) | np.any(pops < -tol, axis=1)
                         | np.any(pops > 1 + tol, axis=1) | ~np.all(np.isfinite(y), axis=1))
    if bad.size:
        k = bad[0]
        raise StateValidityError(
            f"state invalid at t = {t[k]:.6g} us (trace drift {drift[k]:.3e}, "
            f"populations {pops[k]})")


def _linear_system(p, delta_p, loss):
    """Matrix M with d(y)/dt = M y when the Rydberg loss rate is frozen."""
    M = np.empty((10, 10))
    e = np.zeros(10)
    col = np.empty(10)
    for k in range(10):
        e[:] = 0.0
        e[k] = 1.0
        rhs_packed(e, delta_p, p, loss, col)
        M[:, k] = col
    return M


def steady_state(params, delta_p, tol=1e-10, max_iter=200, damping=0.5):
    """Stationary state at fixed probe detuning.

    With the nonlinear loss frozen at ``r = gamma3p*s33`` the equations are
    linear; the trace condition replaces the ground-population row.  ``r`` is
    then iterated to self-consistency with damping.
    """
    p = params.as_array()
    g3p = params.gamma3p_eff
    rhs_vec = np.zeros(10)
    rhs_vec[0] = 1.0
    r = 0.0
    for it in range(max_iter):
        M = _linear_system(p, float(delta_p), r)
        M[0, :] = 0.0
        M[0, :4] = 1.0
        y = np.linalg.solve(M, rhs_vec)
        if g3p == 0.0:
            break
        r_new = g3p * y[2]
        if abs(r_new - r) <= tol * max(abs(r_new), 1e-300):
            break
        r = (1.0 - damping) * r + damping * r_new
    else:
        raise ConvergenceError(f"steady state did not converge in {max_iter} iterations")
    sigma = unpack(y)
    res = np.empty(10)
    rhs_packed(y, float(delta_p), p, g3p * y[2], res)
    if np.max(np.abs(res)) > max(tol, 1e-9) * max(1.0, np.max(np.abs(M))):
        raise ConvergenceError(f"steady-state residual {np.max(np.abs(res)):.3e} above tolerance")
    return sigma
