"""Transmission readout, weak-probe closed form, and spectral observables.

Coherences follow the density-matrix convention of :mod:`eit_sim.model`:
``sigma21 = <2|sigma|1>`` with the Hamiltonian coupling ``+omega_p/2``.  In
that convention an absorbing medium has ``Im(sigma21) < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .errors import FeatureNotFoundError, IllPosedFeatureError, InvalidParameterError
from .model import GAMMA2_MHZ, TWO_PI

FORWARD = "FORWARD"
BACKWARD = "BACKWARD"


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Row-wise record of a (possibly double) probe scan.

    ``populations`` has shape (n, 4); ``direction`` holds FORWARD/BACKWARD
    tags (FORWARD = increasing detuning).
    """

    time_us: np.ndarray
    detuning_MHz: np.ndarray
    direction: np.ndarray
    transmission: np.ndarray
    populations: np.ndarray
    sigma21: np.ndarray

    def __len__(self):
        return self.time_us.size

    def select(self, mask):
        return Spectrum(self.time_us[mask], self.detuning_MHz[mask], self.direction[mask],
                        self.transmission[mask], self.populations[mask], self.sigma21[mask])

    def segment(self, direction):
        return self.select(self.direction == direction)

    def with_transmission(self, transmission):
        return Spectrum(self.time_us, self.detuning_MHz, self.direction,
                        np.asarray(transmission, dtype=float), self.populations, self.sigma21)

    @property
    def directions(self):
        """Scan directions in order of appearance."""
        _, idx = np.unique(self.direction, return_index=True)
        return [str(self.direction[i]) for i in sorted(idx)]


def transmission(sigma21, omega_p, od0, gamma2=TWO_PI * GAMMA2_MHZ):
    """Thin-medium Beer-Lambert transmission of the probe.

    Normalised so the resonant weak-probe two-level steady state
    (``sigma21 = -i*omega_p/gamma2``) transmits ``exp(-od0)``.
    """
    if not omega_p > 0:
        raise InvalidParameterError(f"omega_p must be > 0, got {omega_p!r}")
    absorption = -np.imag(sigma21) * (gamma2 / omega_p)
    return np.exp(-od0 * absorption)


def weak_probe_analytic(params, delta_p):
    """First-order-in-probe steady-state sigma21 of the three-level ladder."""
    g21 = 0.5 * params.gamma2
    g31 = 0.5 * params.gamma3 + params.gamma31
    delta_p = np.asarray(delta_p, dtype=float)
    # cleared of the nested fraction so the ideal dark resonance gives exactly 0
    if params.omega_c == 0:
        return (-0.5j * params.omega_p) / (g21 - 1j * delta_p)
    d31 = g31 - 1j * (delta_p + params.delta_c)
    return (-0.5j * params.omega_p) * d31 / ((g21 - 1j * delta_p) * d31
                                             + 0.25 * params.omega_c ** 2)


def _direction_tags(delta):
    d = np.diff(delta)
    if d.size == 0:
        return np.array([FORWARD])
    step = np.concatenate([[d[0]], d])
    return np.where(step >= 0, FORWARD, BACKWARD)


def spectrum_from_trajectory(traj, params):
    if len(traj) == 0:
        raise InvalidParameterError("empty trajectory")
    s21 = traj.sigma21.copy()
    if params.omega_p > 0:
        T = transmission(s21, params.omega_p, params.od0_eff, params.gamma2)
    else:
        T = np.ones(len(traj))
    return Spectrum(
        time_us=traj.t.copy(),
        detuning_MHz=traj.delta_p / TWO_PI,
        direction=_direction_tags(traj.delta_p),
        transmission=T,
        populations=traj.populations.copy(),
        sigma21=s21,
    )


def _crossing(x, y, i, j, level):
    """Linear interpolation of where y crosses *level* between samples i, j."""
    if y[j] == y[i]:
        return x[i]
    return x[i] + (level - y[i]) * (x[j] - x[i]) / (y[j] - y[i])


def extract_fwhm(spec, direction=None):
    """Full width (MHz) of the transparency peak at half its height.

    The height is measured from the mean of the two absorption minima that
    flank the peak.  By default the FORWARD segment is used when present.
    """
    if direction is None:
        direction = FORWARD if np.any(spec.direction == FORWARD) else BACKWARD
    seg = spec.segment(direction)
    order = np.argsort(seg.detuning_MHz, kind="stable")
    x = seg.detuning_MHz[order]
    T = seg.transmission[order]
    if x.size < 3:
        raise FeatureNotFoundError("too few samples to locate a transparency peak")
    peaks, props = find_peaks(T, prominence=0.0)
    if peaks.size == 0:
        raise FeatureNotFoundError("no local transmission maximum in spectrum")
    k = int(np.argmax(props["prominences"]))
    ipk = peaks[k]
    lb, rb = int(props["left_bases"][k]), int(props["right_bases"][k])
    if lb == 0 or rb == x.size - 1:
        raise IllPosedFeatureError("transparency peak is not flanked by two absorption minima")
    lb = lb + int(np.argmin(T[lb:ipk + 1]))
    rb = ipk + int(np.argmin(T[ipk:rb + 1]))
    base = 0.5 * (T[lb] + T[rb])
    half = 0.5 * (T[ipk] + base)
    below = np.flatnonzero(T <= half)
    left_side = below[below < ipk]
    right_side = below[below > ipk]
    if left_side.size == 0 or right_side.size == 0:
        raise IllPosedFeatureError("half-height crossing lies outside the sampled range")
    i, j = left_side[-1], right_side[0]
    left = _crossing(x, T, i, i + 1, half)
    right = _crossing(x, T, j - 1, j, half)
    return float(right - left)


def extract_peak_populations(traj):
    """(max sigma33 over the trajectory, sigma44 at the last sample)."""
    pops = traj.populations
    return float(pops[:, 2].max()), float(pops[-1, 3])


def segment_aligned_difference(spec, settle_us=0.0):
    """Max |T_forward - T_backward| comparing rows at equal elapsed scan time.

    Rows within *settle_us* of the start of each segment are skipped so the
    probe switch-on transient of the first scan is excluded.  For a detuning
    sweep reversed about its end point, equal elapsed time maps forward
    detuning ``x`` onto backward detuning ``-x``; with ``delta_c = 0`` the
    Bloch equations are symmetric under that reflection, so any difference
    comes from population lost or dephased between the scans.
    """
    fwd = spec.segment(FORWARD)
    bwd = spec.segment(BACKWARD)
    n = min(len(fwd), len(bwd))
    if n == 0:
        raise InvalidParameterError("spectrum needs both scan directions")
    # backward rows start one sample after the turning point
    tf = fwd.time_us[1:n + 1] - fwd.time_us[0]
    tb = bwd.time_us[:n] - fwd.time_us[-1]
    if not np.allclose(tf[: tb.size], tb, rtol=0, atol=1e-9 * max(1.0, tb[-1])):
        raise InvalidParameterError("forward and backward segments are not sampled alike")
    mask = tb >= settle_us
    d = np.abs(fwd.transmission[1:n + 1] - bwd.transmission[:n])
    return float(d[mask].max())


def off_resonant_absorption(spec, direction, window_MHz=(2.0, 20.0)):
    """Mean absorption depth 1 - T over |detuning| within *window_MHz*."""
    seg = spec.segment(direction)
    a = np.abs(seg.detuning_MHz)
    m = (a >= window_MHz[0]) & (a <= window_MHz[1])
    return float(np.mean(1.0 - seg.transmission[m]))


def linewidth_terms(params):
    """Autler-Townes and dephasing contributions to the dark-resonance width, MHz.

    Returns ``(omega_c**2/gamma2, 2*gamma31_total)`` converted to ordinary
    frequency; a rough decomposition useful for interpreting fits.
    """
    at = params.omega_c ** 2 / params.gamma2
    deph = 2.0 * (0.5 * params.gamma3 + params.gamma31)
    return at / TWO_PI, deph / TWO_PI


__all__ = [
    "Spectrum", "FORWARD", "BACKWARD", "transmission", "weak_probe_analytic",
    "spectrum_from_trajectory", "extract_fwhm", "extract_peak_populations",
    "segment_aligned_difference", "off_resonant_absorption", "linewidth_terms",
]
