"""Detector-frame twisted-rapid-passage (TRP) Hamiltonian and propagation.

Everything is dimensionless with hbar = 1. The sweep runs over
``tau in [-tau0/2, tau0/2]``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _pykernel, kernel
from .qcore import (
    BELL,
    basis_state,
    fidelity_error,
    pauli_on,
    polar_snap,
    unitarity_drift,
)

log = logging.getLogger(__name__)

PARAM_NAMES = ("eta4", "lam", "d1", "d2", "d3", "dz", "dxy")
DEFAULT_GRID_N = 16384
DEFAULT_TOL = 1e-10
SNAP_THRESHOLD = 1e-9


class PropagationError(RuntimeError):
    def __init__(self, msg, tau=None):
        super().__init__(msg)
        self.tau = tau


class StepSizeUnderflow(PropagationError):
    pass


class UnitarityDrift(PropagationError):
    pass


@dataclass(frozen=True)
class TrpParams:
    """Dimensionless TRP sweep and coupling parameters."""

    eta4: float
    lam: float
    d1: float
    d2: float
    d3: float
    dz: float
    dxy: float
    tau0: float = 120.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam!r}")
        if self.tau0 <= 0:
            raise ValueError(f"tau0 must be positive, got {self.tau0!r}")

    def coeffs(self):
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @property
    def span(self):
        return (-0.5 * self.tau0, 0.5 * self.tau0)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**{k: float(v) for k, v in d.items()})


#: Optimised parameters from the simulated-annealing search, tau0 = 120.
TABLE1 = TrpParams(eta4=4.526e-4, lam=9.579, d1=1.386, d2=9.622, d3=8.905,
                   dz=0.918, dxy=4.331, tau0=120.0)

#: Starting point of the annealing search.
ANNEAL_START = TrpParams(eta4=1e-4, lam=1.0, d1=1.0, d2=1.0, d3=1.0, dz=1.0,
                         dxy=1.0, tau0=120.0)


@dataclass(frozen=True)
class HamiltonianSample:
    tau: float
    h: np.ndarray


@dataclass
class Trajectory:
    """Unitaries U(tau) sampled on a uniform grid, U(grid[0]) = I."""

    grid: np.ndarray
    unitaries: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def final_unitary(self):
        return self.unitaries[-1]

    @property
    def dtau(self):
        return float(self.grid[1] - self.grid[0])


def twist_phase(tau, p):
    """Quartic twist profile ``(eta4 / 2 lam) tau**4``."""
    t2 = np.square(np.asarray(tau, dtype=float))
    return p.eta4 / (2.0 * p.lam) * (t2 * t2)


_X1, _Y1, _Z1 = (pauli_on(a, 1) for a in "xyz")
_X2, _Y2, _Z2 = (pauli_on(a, 2) for a in "xyz")


def interaction_hamiltonian(p):
    """Anisotropic Heisenberg coupling between the qubits."""
    return -0.5 * math.pi * (p.dz * _Z1 @ _Z2 + p.dxy * (_X1 @ _X2 + _Y1 @ _Y2))


def nominal_hamiltonian(tau, p, phase_offset=0.0):
    """Dimensionless detector-frame TRP Hamiltonian at ``tau``.

    ``phase_offset`` is added to the twist angle (used for phase noise).
    """
    phi = float(twist_phase(tau, p)) + phase_offset
    c, s = math.cos(phi), math.sin(phi)
    h1 = ((-(p.d1 + p.d2) / 2 + tau / p.lam) * _Z1
          - p.d3 / p.lam * (c * _X1 + s * _Y1))
    h2 = ((-p.d2 / 2 + tau / p.lam) * _Z2
          - 1.0 / p.lam * (c * _X2 + s * _Y2))
    return HamiltonianSample(tau=float(tau), h=h1 + h2 + interaction_hamiltonian(p))


def control_generators(p):
    """Derivatives of H with respect to the three control components.

    The control modification is measured in units of the rf amplitude, so the
    generator for axis j is ``-(d3 sigma_j^1 + sigma_j^2) / lam``.
    """
    return np.stack([-(p.d3 * pauli_on(a, 1) + pauli_on(a, 2)) / p.lam for a in "xyz"])


def resonance_times(p):
    """Real roots of ``tau / lam = (1/2) d(phi_4)/d(tau)``: 0 and +-1/sqrt(eta4)."""
    if p.eta4 > 0:
        r = 1.0 / math.sqrt(p.eta4)
        return [-r, 0.0, r]
    return [0.0]


def uniform_grid(tau_start, tau_end, grid_n):
    if grid_n < 1:
        raise ValueError("grid_n must be positive")
    return np.linspace(tau_start, tau_end, grid_n + 1)


def _check_status(stats):
    if stats["status"] == _pykernel.STATUS_UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at tau={stats['fail_tau']:.9g}",
                                stats["fail_tau"])
    if stats["status"] == _pykernel.STATUS_MAX_STEPS:
        raise PropagationError(f"step budget exhausted at tau={stats['fail_tau']:.9g}",
                               stats["fail_tau"])


def _finish_unitaries(unitaries, tol):
    drift = unitarity_drift(unitaries)
    if drift > 10 * tol:
        raise UnitarityDrift(f"unitarity drift {drift:.3e} exceeds {10 * tol:.1e}")
    if drift > SNAP_THRESHOLD:
        log.warning("unitarity drift %.3e > %.1e; re-projecting onto unitaries",
                    drift, SNAP_THRESHOLD)
        unitaries = polar_snap(unitaries)
    return unitaries, drift


def propagate(h_of_tau, tau_start, tau_end, tol=DEFAULT_TOL, grid_n=DEFAULT_GRID_N):
    """Solve ``i dU/dtau = H(tau) U`` from ``U(tau_start) = I`` for any callable H.

    Uses the pure-Python integrator; U is stored at ``grid_n + 1`` uniform
    points.
    """
    if not tau_start < tau_end:
        raise ValueError("need tau_start < tau_end")
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = uniform_grid(tau_start, tau_end, grid_n)
    dim = np.asarray(h_of_tau(tau_start)).shape[0]

    def rhs(tau, u):
        return -1j * (np.asarray(h_of_tau(tau)) @ u)

    stored, _, stats = _pykernel.integrate(
        rhs, tau_start, tau_end, np.eye(dim, dtype=complex), tol, tol * 1e-2,
        grid, np.ones(grid.size, dtype=bool))
    _check_status(stats)
    unitaries, drift = _finish_unitaries(stored, tol)
    stats["unitarity_drift"] = drift
    return Trajectory(grid=grid, unitaries=unitaries, stats=stats)


def _stops(tau_start, tau_end, grid, phase_noise):
    parts = [np.array([tau_start, tau_end])]
    if grid is not None:
        parts.append(grid)
    if phase_noise is not None:
        times = np.asarray(phase_noise[0], dtype=float)
        parts.append(times[(times > tau_start) & (times < tau_end)])
    return np.unique(np.concatenate(parts))


def propagate_trp(p, y0, *, tol=DEFAULT_TOL, grid=None, store=False, delta_f=None,
                  phase_noise=None, backend=None):
    """Integrate the TRP Schrodinger equation for a ``(4, k)`` initial block.

    Parameters
    ----------
    grid : array, optional
        Uniform grid. Required when ``store`` is set or ``delta_f`` is given;
        steps never straddle a grid point in that case.
    delta_f : array ``(len(grid), 3)``, optional
        Control modification, linearly interpolated between grid points.
    phase_noise : ``(times, values)``, optional
        Piecewise-constant twist-phase offset; ``values[j]`` applies from
        ``times[j]`` until the next event.

    Returns ``(stored, y_final, stats)`` where ``stored`` holds ``y`` at each
    grid point when ``store`` is set.
    """
    tau_start, tau_end = p.span
    if (store or delta_f is not None) and grid is None:
        raise ValueError("grid is required when storing samples or applying delta_f")
    stops = _stops(tau_start, tau_end, grid, phase_noise)
    if store:
        store_mask = np.isin(stops, grid)
    else:
        store_mask = np.zeros(stops.size, dtype=bool)
    kwargs = {}
    if delta_f is not None:
        delta_f = np.ascontiguousarray(delta_f, dtype=float)
        if delta_f.shape != (grid.size, 3):
            raise ValueError(f"delta_f must have shape {(grid.size, 3)}, got {delta_f.shape}")
        kwargs.update(dF=delta_f, dF_t0=float(grid[0]), dF_dt=float(grid[1] - grid[0]))
    if phase_noise is not None:
        times, values = (np.ascontiguousarray(a, dtype=float) for a in phase_noise)
        kwargs.update(noise_times=times, noise_vals=values)
    stored, y, stats = kernel.propagate_trp(
        p.coeffs(), tau_start, tau_end, np.asarray(y0, dtype=complex), tol, tol * 1e-2,
        stops, store_mask, backend=backend, **kwargs)
    _check_status(stats)
    return stored, y, stats


def trp_trajectory(p, *, tol=DEFAULT_TOL, grid_n=DEFAULT_GRID_N, delta_f=None,
                   phase_noise=None, backend=None):
    """Full unitary U(tau) on the uniform ``grid_n`` grid."""
    grid = uniform_grid(*p.span, grid_n)
    stored, _, stats = propagate_trp(p, np.eye(4, dtype=complex), tol=tol, grid=grid,
                                     store=True, delta_f=delta_f,
                                     phase_noise=phase_noise, backend=backend)
    unitaries, drift = _finish_unitaries(stored, tol)
    stats["unitarity_drift"] = drift
    stats["backend"] = backend or kernel.BACKEND
    return Trajectory(grid=grid, unitaries=unitaries, stats=stats)


def trp_final_state(p, psi0=None, *, tol=DEFAULT_TOL, grid=None, delta_f=None,
                    phase_noise=None, backend=None):
    """Final state from ``psi0`` (default |00>) without storing samples."""
    if psi0 is None:
        psi0 = basis_state("00")
    y0 = np.asarray(psi0, dtype=complex).reshape(4, 1)
    _, y, _ = propagate_trp(p, y0, tol=tol, grid=grid, delta_f=delta_f,
                            phase_noise=phase_noise, backend=backend)
    return y[:, 0]


def error_vs_target(psi, target=None):
    """``1 - |<psi|target>|^2`` with the target defaulting to the 01 Bell state."""
    if target is None:
        target = BELL["01"]
    psi = psi / np.linalg.norm(psi)
    return fidelity_error(psi, target)[1]


def nominal_run(p, *, tol=DEFAULT_TOL, grid_n=DEFAULT_GRID_N, backend=None):
    """Propagate the nominal TRP control; returns ``(trajectory, psi0f, eps0)``."""
    traj = trp_trajectory(p, tol=tol, grid_n=grid_n, backend=backend)
    psi0f = traj.final_unitary[:, 0].copy()
    return traj, psi0f, error_vs_target(psi0f)


def nominal_error(p, *, tol=1e-8, backend=None):
    """Nominal error probability from |00> only (cheap objective for searches)."""
    return error_vs_target(trp_final_state(p, tol=tol, backend=backend))
