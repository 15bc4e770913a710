import numpy as np
import pytest

from eit_sim import SolverOptions, SweepProgram, SystemParams, evolve, steady_state
from eit_sim.errors import ConvergenceError, IntegrationError, InvalidParameterError, \
    StateValidityError
from eit_sim.integrator import ORDER
from eit_sim.model import TWO_PI, ScanMode, ground_state, liouvillian_rhs

from conftest import low_power_params


def test_no_fields_stays_in_ground_state():
    p = SystemParams(omega_p=0.0, omega_c=0.0)
    traj = evolve(p, SweepProgram())
    assert np.all(traj.states == ground_state())


def test_output_grid_and_detuning(low_power_run):
    _, traj, _ = low_power_run
    assert len(traj) == 2 * 801 - 1
    assert traj.t[0] == 0.0 and traj.t[-1] == 960.0
    assert np.all(np.diff(traj.t) > 0)
    assert np.array_equal(traj.delta_p, SweepProgram().detuning(traj.t))


def test_single_scan_grid():
    p = low_power_params()
    sw = SweepProgram.from_lab(-20, 20, 480, double=False)
    traj = evolve(p, sw, SolverOptions(output_points=101))
    assert len(traj) == 101 and sw.mode is ScanMode.SINGLE


def test_conservation_over_double_scan(low_power_run):
    _, traj, _ = low_power_run
    s = traj.states
    assert np.max(np.abs(np.trace(s, axis1=1, axis2=2) - 1)) <= 1e-9
    assert np.max(np.abs(s - np.conj(np.swapaxes(s, 1, 2)))) <= 1e-10
    assert np.all(s[:, 3, :3] == 0)


def test_low_power_rydberg_fraction(low_power_run):
    _, traj, _ = low_power_run
    assert abs(traj.populations[:, 2].max() - 0.006) <= 0.003


def test_deterministic():
    p = low_power_params()
    a = evolve(p, SweepProgram())
    b = evolve(p, SweepProgram())
    assert np.array_equal(a.states, b.states)
    assert a.stats == b.stats


def test_step_budget_raises_with_last_time():
    p = low_power_params()
    with pytest.raises(IntegrationError) as info:
        evolve(p, SweepProgram(), SolverOptions(max_steps=50))
    assert 0.0 < info.value.t_last < 480.0


def test_invalid_initial_state_rejected():
    with pytest.raises(StateValidityError):
        evolve(low_power_params(), SweepProgram(), initial=np.eye(4))


def test_solver_options_validation():
    for kw in ({"rtol": 0}, {"atol": -1}, {"output_points": 1}, {"fixed_step": 0.0},
               {"max_step": 0}):
        with pytest.raises(InvalidParameterError):
            SolverOptions(**kw)


def _endpoint(p, sweep, opts):
    return evolve(p, sweep, opts).states[-1]


def test_convergence_order():
    p = low_power_params()
    # first 2 us of the standard chirp; the switch-on transient exercises all rates
    sweep = SweepProgram(delta_start=-TWO_PI * 20, delta_end=-TWO_PI * (20 - 40 * 2 / 480),
                         duration_single=2.0, mode=ScanMode.SINGLE)
    ref = _endpoint(p, sweep, SolverOptions(rtol=1e-13, atol=1e-16, max_step=1e-3,
                                            output_points=2))
    errs = [np.max(np.abs(_endpoint(p, sweep, SolverOptions(fixed_step=h, output_points=2))
                          - ref)) for h in (0.004, 0.002)]
    assert errs[0] / errs[1] >= 2 ** (ORDER - 0.5)


def test_quasi_static_limit():
    # reservoir return made fast so a stationary state exists within the ground manifold
    p = low_power_params(gamma4=TWO_PI * 6.065)
    sweep = SweepProgram.from_lab(-20, 20, 480 * 100, double=False)
    traj = evolve(p, sweep, SolverOptions(output_points=41, max_step=5.0))
    ss = np.array([steady_state(p, d)[1, 0] for d in traj.delta_p])
    assert np.max(np.abs(traj.sigma21[1:] - ss[1:])) <= 1e-3


def test_steady_state_trivial():
    p = SystemParams(omega_p=0.0, omega_c=0.0)
    assert np.allclose(steady_state(p, 1.0), ground_state())


def test_steady_state_is_stationary():
    p = low_power_params(gamma3p=TWO_PI * 9.0, gamma4=TWO_PI * 0.5)
    s = steady_state(p, TWO_PI * 0.3)
    d = liouvillian_rhs(s, p, TWO_PI * 0.3)
    assert np.max(np.abs(d)) <= 1e-9


def test_steady_state_weak_probe_nonlinear_loss_is_first_order():
    # gamma3p*s33 damps the Rydberg coherences, so the shift is linear in gamma3p*s33
    g2 = TWO_PI * 6.065
    p0 = low_power_params(omega_p=g2 / 1000, gamma4=g2)
    grid = TWO_PI * np.linspace(-20, 20, 81)
    base = np.array([steady_state(p0, d)[1, 0] for d in grid])

    def shift(g3p_mhz):
        p1 = p0.replace(gamma3p=TWO_PI * g3p_mhz)
        return np.max(np.abs(np.array([steady_state(p1, d)[1, 0] for d in grid]) - base))

    small, large = shift(0.5), shift(5.0)
    assert small <= 1e-8
    assert large / small == pytest.approx(10.0, rel=1e-2)


def test_steady_state_iteration_budget():
    from conftest import high_power_params
    with pytest.raises(ConvergenceError):
        steady_state(high_power_params(gamma3p=TWO_PI * 500), 0.0, max_iter=2)
