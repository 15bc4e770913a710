"""Four-level ladder model of cold-atom Rydberg EIT.

Levels are ordered |1> (ground), |2> (intermediate), |3> (Rydberg) and
|4> (reservoir of states the Rydberg level leaks into).  Internal units are
microseconds and rad/us; laboratory values in MHz of ordinary frequency are
converted by :func:`lab_to_internal`, which is the only place a factor of
2*pi enters.

The Rydberg level loses population at ``gamma3*s33 + gamma3p*s33**2``.  The
linear part is spontaneous emission split between |2> and |4> by
``branch_b``; the quadratic part is a density-dependent loss that goes
entirely to |4>.  Coherences decay at half the summed population decay
rates of the two levels involved, with the instantaneous nonlinear rate
``gamma3p*s33`` counted for |3>.  ``gamma31`` adds pure dephasing to
coherences involving |3>.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidParameterError, StateValidityError

TWO_PI = 2.0 * math.pi

#: Rb D2 natural linewidth, MHz.
GAMMA2_MHZ = 6.065
#: 10 us Rydberg lifetime, MHz.
GAMMA3_MHZ = 0.016
#: Reservoir return, MHz; ~16 ms, effectively no return within a scan.
GAMMA4_MHZ = 1e-5
#: Saturation intensity of the Rb D2 cycling transition, mW/cm^2.
I_SAT_MW_CM2 = 1.67

# Lab-unit suffix for every SystemParams field.  Fields ending in _MHz are
# ordinary frequencies and get the 2*pi factor on the way in.
LAB_UNITS = {
    "omega_p": "MHz",
    "omega_c": "MHz",
    "delta_c": "MHz",
    "gamma2": "MHz",
    "gamma3": "MHz",
    "gamma3p": "MHz",
    "gamma4": "MHz",
    "gamma31": "MHz",
    "branch_b": "",
    "od0": "",
    "density_scale": "",
}

_RATE_FIELDS = ("gamma2", "gamma3", "gamma3p", "gamma4", "gamma31")


def mhz_to_rad(value):
    """Ordinary frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * value


def lab_to_internal(name, value):
    """Convert a laboratory-unit value of SystemParams field *name*."""
    if name not in LAB_UNITS:
        raise InvalidParameterError(f"unknown parameter {name!r}")
    return mhz_to_rad(value) if LAB_UNITS[name] == "MHz" else float(value)


def internal_to_lab(name, value):
    if name not in LAB_UNITS:
        raise InvalidParameterError(f"unknown parameter {name!r}")
    return value / TWO_PI if LAB_UNITS[name] == "MHz" else float(value)


@dataclass(frozen=True)
class SystemParams:
    """Rates and couplings of the four-level model, all in rad/us.

    ``dephase_32`` controls whether ``gamma31`` also dephases the |3>-|2>
    coherence.
    """

    omega_p: float
    omega_c: float
    delta_c: float = 0.0
    gamma2: float = TWO_PI * GAMMA2_MHZ
    gamma3: float = TWO_PI * GAMMA3_MHZ
    gamma3p: float = 0.0
    gamma4: float = TWO_PI * GAMMA4_MHZ
    gamma31: float = 0.0
    branch_b: float = 0.5
    od0: float = 1.0
    density_scale: float = 1.0
    dephase_32: bool = True

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name == "dephase_32":
                continue
            v = getattr(self, f.name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise InvalidParameterError(f"{f.name} must be a finite number, got {v!r}")
        for name in _RATE_FIELDS + ("od0", "density_scale"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.branch_b <= 1.0:
            raise InvalidParameterError(f"branch_b must lie in [0, 1], got {self.branch_b}")

    @classmethod
    def from_lab(cls, **values):
        """Build from laboratory units (MHz ordinary frequency, dimensionless)."""
        kw = {}
        for name, v in values.items():
            kw[name] = v if name == "dephase_32" else lab_to_internal(name, v)
        return cls(**kw)

    def to_lab(self):
        return {f.name: (getattr(self, f.name) if f.name == "dephase_32"
                         else internal_to_lab(f.name, getattr(self, f.name)))
                for f in dataclasses.fields(self)}

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def gamma3p_eff(self):
        return self.gamma3p * self.density_scale

    @property
    def od0_eff(self):
        return self.od0 * self.density_scale

    def as_array(self):
        """Flat float array consumed by the compiled right-hand side."""
        return np.array([
            self.omega_p, self.omega_c, self.delta_c, self.gamma2, self.gamma3,
            self.gamma3p_eff, self.gamma4, self.gamma31, self.branch_b,
            1.0 if self.dephase_32 else 0.0,
        ])


class ScanMode(enum.Enum):
    SINGLE = "SINGLE"
    DOUBLE = "DOUBLE"


@dataclass(frozen=True)
class SweepProgram:
    """Linear probe-detuning chirp, optionally retraced back to the start."""

    delta_start: float = -TWO_PI * 20.0
    delta_end: float = TWO_PI * 20.0
    duration_single: float = 480.0
    mode: ScanMode = ScanMode.DOUBLE

    def __post_init__(self):
        if not (self.duration_single > 0 and math.isfinite(self.duration_single)):
            raise InvalidParameterError("duration_single must be > 0")
        if not (math.isfinite(self.delta_start) and math.isfinite(self.delta_end)):
            raise InvalidParameterError("sweep endpoints must be finite")
        if self.delta_start == self.delta_end:
            raise InvalidParameterError("delta_start and delta_end must differ")

    @classmethod
    def from_lab(cls, start_MHz=-20.0, end_MHz=20.0, duration_us=480.0, double=True):
        return cls(mhz_to_rad(start_MHz), mhz_to_rad(end_MHz),
                   float(duration_us), ScanMode.DOUBLE if double else ScanMode.SINGLE)

    @property
    def total_duration(self):
        n = 2 if self.mode is ScanMode.DOUBLE else 1
        return n * self.duration_single

    def segments(self):
        """(t0, t1, delta_at_t0, delta_at_t1) for each monotone piece."""
        T = self.duration_single
        segs = [(0.0, T, self.delta_start, self.delta_end)]
        if self.mode is ScanMode.DOUBLE:
            segs.append((T, 2 * T, self.delta_end, self.delta_start))
        return segs

    def detuning(self, t):
        t = np.asarray(t, dtype=float)
        T = self.duration_single
        s = t
        if self.mode is ScanMode.DOUBLE:
            s = np.where(t > T, 2 * T - t, t)
        out = self.delta_start + (self.delta_end - self.delta_start) * (s / T)
        return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# density matrices

def ground_state():
    sigma = np.zeros((4, 4), dtype=complex)
    sigma[0, 0] = 1.0
    return sigma


def check_density_matrix(sigma, trace_tol=1e-9, herm_tol=1e-12):
    """Raise StateValidityError unless *sigma* is a valid model state."""
    sigma = np.asarray(sigma)
    if sigma.shape != (4, 4):
        raise StateValidityError(f"density matrix must be 4x4, got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise StateValidityError("density matrix has non-finite entries")
    if np.max(np.abs(sigma - sigma.conj().T)) > herm_tol:
        raise StateValidityError("density matrix is not Hermitian")
    tr = np.trace(sigma).real
    if abs(tr - 1.0) > trace_tol:
        raise StateValidityError(f"trace deviates from 1 by {tr - 1.0:.3e}")
    d = np.diag(sigma).real
    if np.any(d < -trace_tol) or np.any(d > 1 + trace_tol):
        raise StateValidityError(f"populations out of [0, 1]: {d}")
    if np.max(np.abs(sigma[3, :3])) > herm_tol:
        raise StateValidityError("reservoir level |4> must carry no coherences")
    return sigma


def pack(sigma):
    """4x4 matrix -> 10 reals (populations, Re/Im of s21, s31, s32)."""
    s = np.asarray(sigma)
    return np.array([
        s[0, 0].real, s[1, 1].real, s[2, 2].real, s[3, 3].real,
        s[1, 0].real, s[1, 0].imag, s[2, 0].real, s[2, 0].imag,
        s[2, 1].real, s[2, 1].imag,
    ])


def unpack(y):
    """Inverse of :func:`pack`; also accepts a (n, 10) stack."""
    y = np.asarray(y)
    out = np.zeros(y.shape[:-1] + (4, 4), dtype=complex)
    for k in range(4):
        out[..., k, k] = y[..., k]
    for (i, j), k in (((1, 0), 4), ((2, 0), 6), ((2, 1), 8)):
        c = y[..., k] + 1j * y[..., k + 1]
        out[..., i, j] = c
        out[..., j, i] = np.conj(c)
    return out


# --------------------------------------------------------------------------
# Hamiltonian and relaxation

def hamiltonian(params, delta_p):
    """Rotating-frame ladder Hamiltonian H/hbar in rad/us."""
    if not math.isfinite(delta_p):
        raise InvalidParameterError(f"delta_p must be finite, got {delta_p!r}")
    H = np.zeros((4, 4), dtype=complex)
    H[1, 1] = -delta_p
    H[2, 2] = -(delta_p + params.delta_c)
    H[0, 1] = H[1, 0] = 0.5 * params.omega_p
    H[1, 2] = H[2, 1] = 0.5 * params.omega_c
    return H


@dataclass(frozen=True)
class DecayRates:
    """Per-population transfer coefficients and coherence damping rates.

    A flow ``k_ij`` moves population from |i> to |j> at ``k_ij * s_ii``.
    """

    k21: float
    k32: float
    k34: float
    k41: float
    gamma_21: float
    gamma_31: float
    gamma_32: float

    def flows(self, populations):
        p1, p2, p3, p4 = populations
        return {"2->1": self.k21 * p2, "3->2": self.k32 * p3,
                "3->4": self.k34 * p3, "4->1": self.k41 * p4}


def decay_rates(params, sigma33, tol=1e-9):
    if not -tol <= sigma33 <= 1 + tol:
        raise StateValidityError(f"sigma33 = {sigma33} outside [0, 1]")
    b = params.branch_b
    loss = params.gamma3p_eff * sigma33
    deph32 = params.gamma31 if params.dephase_32 else 0.0
    return DecayRates(
        k21=params.gamma2,
        k32=b * params.gamma3,
        k34=(1.0 - b) * params.gamma3 + loss,
        k41=params.gamma4,
        gamma_21=0.5 * params.gamma2,
        gamma_31=0.5 * (params.gamma3 + loss) + params.gamma31,
        gamma_32=0.5 * (params.gamma2 + params.gamma3 + loss) + deph32,
    )


@numba.njit(cache=True, nogil=True, fastmath={'nsz', 'arcp', 'contract', 'reassoc'})
def rhs_packed(y, delta_p, p, loss, out):
    """Packed Bloch equations with the Rydberg loss rate frozen at *loss*.

    ``p`` is :meth:`SystemParams.as_array`.  Passing ``loss = gamma3p*y[2]``
    gives the full nonlinear equations; any fixed value gives the linear
    system used by the steady-state solver.
    """
    a = 0.5 * p[0]
    c = 0.5 * p[1]
    g2 = p[3]
    g3 = p[4]
    g4 = p[6]
    g31 = p[7]
    b = p[8]
    p1 = y[0]
    p2 = y[1]
    p3 = y[2]
    p4 = y[3]
    r21 = y[4]
    i21 = y[5]
    r31 = y[6]
    i31 = y[7]
    r32 = y[8]
    i32 = y[9]
    d2 = -delta_p
    d3 = -(delta_p + p[2])
    G21 = 0.5 * g2
    G31 = 0.5 * (g3 + loss) + g31
    G32 = 0.5 * (g2 + g3 + loss) + p[9] * g31

    out[0] = 2.0 * a * i21 + g2 * p2 + g4 * p4
    out[1] = -2.0 * a * i21 + 2.0 * c * i32 - g2 * p2 + b * g3 * p3
    out[2] = -2.0 * c * i32 - (g3 + loss) * p3
    out[3] = ((1.0 - b) * g3 + loss) * p3 - g4 * p4
    # d s_ij/dt = -i [H, s]_ij - G_ij s_ij
    xr = a * (p1 - p2) + d2 * r21 + c * r31
    xi = d2 * i21 + c * i31
    out[4] = xi - G21 * r21
    out[5] = -xr - G21 * i21
    xr = c * r21 + d3 * r31 - a * r32
    xi = c * i21 + d3 * i31 - a * i32
    out[6] = xi - G31 * r31
    out[7] = -xr - G31 * i31
    xr = c * (p2 - p3) + (d3 - d2) * r32 - a * r31
    xi = (d3 - d2) * i32 - a * i31
    out[8] = xi - G32 * r32
    out[9] = -xr - G32 * i32


def liouvillian_rhs(state, params, delta_p):
    """d(sigma)/dt in 1/us for a 4x4 state."""
    check_density_matrix(state)
    if not math.isfinite(delta_p):
        raise InvalidParameterError(f"delta_p must be finite, got {delta_p!r}")
    y = pack(state)
    out = np.empty(10)
    rhs_packed(y, float(delta_p), params.as_array(), params.gamma3p_eff * y[2], out)
    return unpack(out)


# --------------------------------------------------------------------------
# probe calibration

def probe_rabi_from_power(power_uW, beam_radius_mm=0.75, i_sat_mW_per_cm2=I_SAT_MW_CM2,
                          gamma2=TWO_PI * GAMMA2_MHZ):
    """Saturation fraction and probe Rabi frequency for a top-hat beam.

    Returns ``(I/I_sat, omega_p)`` with ``omega_p`` in rad/us.  The Rabi
    frequency is referenced to the optical coherence damping ``gamma2/2``:
    ``omega_p = (gamma2/2) * sqrt(s/2)``.
    """
    for name, v in (("power_uW", power_uW), ("beam_radius_mm", beam_radius_mm),
                    ("i_sat_mW_per_cm2", i_sat_mW_per_cm2), ("gamma2", gamma2)):
        if not (math.isfinite(v) and v > 0):
            raise InvalidParameterError(f"{name} must be > 0, got {v!r}")
    area_cm2 = math.pi * (0.1 * beam_radius_mm) ** 2
    intensity = 1e-3 * power_uW / area_cm2
    s = intensity / i_sat_mW_per_cm2
    return s, 0.5 * gamma2 * math.sqrt(s / 2.0)
