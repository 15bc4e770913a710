import numpy as np
import pytest

from eit_sim import (FitProblem, FreeParameter, SolverOptions, SweepProgram, extract_fwhm, fit,
                     spectrum_from_trajectory, evolve, synthesize_data)
from eit_sim.errors import IllPosedProblemError, IntegrationError, InvalidParameterError
from eit_sim.fitting import (OFFSET, CandidateFailed, gaussian_noise, model_spectrum,
                             nelder_mead, residuals)
from eit_sim.model import TWO_PI
from eit_sim.spectroscopy import Spectrum

from conftest import low_power_params

TRUTH = low_power_params()


def _free(omega_c=True, gamma31=True):
    out = []
    if omega_c:
        out.append(FreeParameter("omega_c", TWO_PI * 1.6, TWO_PI * 0.5, TWO_PI * 4.0))
    if gamma31:
        out.append(FreeParameter("gamma31", TWO_PI * 0.15, 0.0, TWO_PI * 1.0))
    out.append(FreeParameter("od0", 0.8, 0.1, 5.0))
    out.append(FreeParameter(OFFSET, 0.05, -1.0, 1.0))
    return tuple(out)


def _truth_values():
    return {"omega_c": TRUTH.omega_c, "gamma31": TRUTH.gamma31, "od0": 1.0, OFFSET: 0.0}


@pytest.fixture(scope="module")
def clean_data():
    return synthesize_data(TRUTH)


@pytest.fixture(scope="module")
def noisy_data():
    return synthesize_data(TRUTH, noise_sigma=0.005, seed=3)


# --- residuals ---------------------------------------------------------------

def test_residuals_vanish_at_generating_parameters(clean_data):
    pr = FitProblem(clean_data, _free(), TRUTH)
    assert np.all(residuals(_truth_values(), pr) == 0)


def test_coupling_perturbation_concentrated_near_line_center(clean_data):
    pr = FitProblem(clean_data, _free(), TRUTH)
    r = residuals({**_truth_values(), "omega_c": 1.1 * TRUTH.omega_c}, pr)
    near = np.abs(clean_data.detuning_MHz) <= 2.0
    assert np.sum(r[near] ** 2) >= 0.9 * np.sum(r ** 2)
    assert np.abs(r[near]).max() > 3 * np.abs(r[~near]).max()


def test_offset_gauge(clean_data):
    shifted = Spectrum(clean_data.time_us, clean_data.detuning_MHz + 0.3, clean_data.direction,
                       clean_data.transmission, clean_data.populations, clean_data.sigma21)
    pr0 = FitProblem(clean_data, _free(), TRUTH)
    pr1 = FitProblem(shifted, _free(), TRUTH)
    cand = {**_truth_values(), "omega_c": 1.05 * TRUTH.omega_c}
    r0 = residuals(cand, pr0)
    r1 = residuals({**cand, OFFSET: 0.3}, pr1)
    assert np.allclose(r0, r1, rtol=0, atol=1e-12)


def test_integration_failure_names_candidate(clean_data):
    pr = FitProblem(clean_data, _free(), TRUTH, solver=SolverOptions(max_steps=10))
    with pytest.raises(CandidateFailed) as info:
        residuals(_truth_values(), pr)
    assert isinstance(info.value, IntegrationError)
    assert info.value.candidate["od0"] == 1.0


# --- problem validation ---------------------------------------------------------------

def test_free_parameter_validation(clean_data):
    with pytest.raises(InvalidParameterError):
        FreeParameter("omega_x", 1.0, 0.0, 2.0)
    with pytest.raises(InvalidParameterError):
        FreeParameter("od0", 3.0, 0.0, 2.0)
    with pytest.raises(InvalidParameterError):
        FitProblem(clean_data, (FreeParameter("od0", 1, 0, 2), FreeParameter("od0", 1, 0, 2)),
                   TRUTH)


def test_degenerate_problems_rejected(clean_data):
    flat = clean_data.with_transmission(np.full(len(clean_data), 0.5))
    with pytest.raises(IllPosedProblemError):
        fit(FitProblem(flat, _free(), TRUTH))
    tiny = clean_data.select(np.arange(len(clean_data)) < 5)
    with pytest.raises(IllPosedProblemError):
        fit(FitProblem(tiny, _free(), TRUTH))


# --- optimiser ----------------------------------------------------------------------------------

def test_nelder_mead_quadratic_and_bounds():
    target = np.array([0.3, 0.8, 1.4])   # last coordinate lies outside the box
    x, f, it, n_eval, conv, hist = nelder_mead(lambda u: float(np.sum((u - target) ** 2)),
                                               np.array([0.5, 0.5, 0.5]))
    assert conv
    assert np.allclose(x, [0.3, 0.8, 1.0], atol=1e-5)
    assert np.all((x >= 0) & (x <= 1))
    assert np.all(np.diff(hist) <= 0)
    assert n_eval > it


def test_nelder_mead_budget_reports_not_converged():
    rosen = lambda u: float(100 * (u[1] - u[0] ** 2) ** 2 + (1 - u[0]) ** 2)  # noqa: E731
    *_, conv, hist = nelder_mead(rosen, np.array([0.1, 0.9]), max_iter=5)
    assert not conv and len(hist) == 5


def test_noiseless_self_fit(clean_data):
    res = fit(FitProblem(clean_data, _free(), TRUTH), n_starts=1)
    assert res.converged
    assert res.sse <= 1e-10
    assert res.values["omega_c"] == pytest.approx(TRUTH.omega_c, rel=1e-4)
    assert res.values["gamma31"] == pytest.approx(TRUTH.gamma31, rel=1e-3)
    assert np.all(np.diff(res.history) <= 0)


def test_noisy_fit_and_reported_linewidth(noisy_data):
    res = fit(FitProblem(noisy_data, _free(), TRUTH), n_starts=2)
    assert res.values["omega_c"] == pytest.approx(TRUTH.omega_c, rel=0.05)
    assert res.values["gamma31"] == pytest.approx(TRUTH.gamma31, rel=0.25)
    assert res.values["od0"] == pytest.approx(1.0, rel=0.05)
    for f in _free():
        assert f.lower <= res.values[f.name] <= f.upper
    assert all(np.isfinite(v) and v > 0 for v in res.uncertainties.values())
    assert len(res.start_sse) == 2 and res.sse == min(res.start_sse)
    best = model_spectrum(res.params, SweepProgram(), SolverOptions())
    assert abs(extract_fwhm(best) - 0.58) <= 0.04


def test_fixing_dephasing_tightens_coupling(noisy_data):
    joint = fit(FitProblem(noisy_data, _free(), TRUTH), n_starts=1)
    fixed = fit(FitProblem(noisy_data, _free(gamma31=False), TRUTH), n_starts=1)
    assert fixed.uncertainties["omega_c"] < joint.uncertainties["omega_c"]


def test_fit_deterministic(clean_data):
    noisy = synthesize_data(TRUTH, noise_sigma=0.005, seed=11)
    a = fit(FitProblem(noisy, _free(), TRUTH, seed=4), n_starts=2, uncertainties=False)
    b = fit(FitProblem(noisy, _free(), TRUTH, seed=4), n_starts=2, uncertainties=False)
    assert a.values == b.values and a.sse == b.sse


# --- synthetic data -------------------------------------------------------------------------

def test_synthesize_noiseless_matches_simulation(clean_data):
    direct = spectrum_from_trajectory(evolve(TRUTH, SweepProgram()), TRUTH)
    assert np.array_equal(clean_data.transmission, direct.transmission)


def test_synthesize_reproducible_and_noise_level(clean_data):
    a = synthesize_data(TRUTH, noise_sigma=0.005, seed=5)
    b = synthesize_data(TRUTH, noise_sigma=0.005, seed=5)
    c = synthesize_data(TRUTH, noise_sigma=0.005, seed=6)
    assert np.array_equal(a.transmission, b.transmission)
    assert not np.array_equal(a.transmission, c.transmission)
    fwd = a.direction == "FORWARD"
    dev = (a.transmission - clean_data.transmission)[fwd][:801]
    assert abs(np.std(dev, ddof=1) / 0.005 - 1) <= 0.15
    assert np.all((a.transmission > 0) & (a.transmission <= 1))
    with pytest.raises(InvalidParameterError):
        synthesize_data(TRUTH, noise_sigma=-1.0)


def test_gaussian_noise_algorithm():
    u = np.random.Generator(np.random.PCG64(9)).random(8)
    want = np.sqrt(-2 * np.log(1 - u[0::2])) * np.cos(2 * np.pi * u[1::2])
    assert np.allclose(gaussian_noise(4, 9), want, rtol=1e-14)
