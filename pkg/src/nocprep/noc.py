"""Neighboring-optimal-control (NOC) correction of a nominal TRP control.

Pipeline: target gate -> gate defect ``delta_beta`` -> interaction-picture
generators ``G(tau)`` -> Riccati matrix ``S(tau)`` -> gain ``C(tau)`` ->
state deviation ``dy(tau)`` -> control modification ``dF = -C dy`` ->
repropagation with ``F0 + dF``.

Vectorised quantities use column stacking (:func:`qcore.vectorize`), so with
two qubits ``G(tau)`` is 16 x 3, ``S(tau)`` is 16 x 16 and ``C(tau)`` 3 x 16.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .qcore import BELL, BELL_LABELS, vectorize

log = logging.getLogger(__name__)

MAX_DELTA_BETA = 0.5
MAX_DELTA_F = 1e3


class NocError(RuntimeError):
    pass


class AmbiguousTargetError(NocError):
    pass


class LinearizationError(NocError):
    pass


class SingularWeightError(NocError):
    def __init__(self, msg, tau=None):
        super().__init__(msg)
        self.tau = tau


@dataclass(frozen=True)
class TargetGate:
    """Target unitary whose columns are phased Bell states.

    ``labels[c]`` is the Bell label assigned to input basis state ``c``
    (ordered |00>, |01>, |10>, |11>) and ``phases[c]`` its phase.
    """

    u_tgt: np.ndarray
    phases: tuple
    labels: tuple


@dataclass(frozen=True)
class NocWeights:
    """Weight matrices of the quadratic cost.

    Rules: ``q_rule`` in {"projector", "identity", "constant"} and ``r_rule``
    in {"gram", "identity", "constant"}. With "projector"/"gram",
    ``Q = G (G^+ G)^-1 G^+ / r`` and ``R = r G^+ G``.
    """

    r: float = 70.0
    q_rule: str = "projector"
    r_rule: str = "gram"
    q_const: np.ndarray | None = None
    r_const: np.ndarray | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"r must be positive, got {self.r!r}")
        if self.q_rule not in ("projector", "identity", "constant"):
            raise ValueError(f"unknown q_rule {self.q_rule!r}")
        if self.r_rule not in ("gram", "identity", "constant"):
            raise ValueError(f"unknown r_rule {self.r_rule!r}")
        if self.q_rule == "constant" and self.q_const is None:
            raise ValueError("q_rule 'constant' needs q_const")
        if self.r_rule == "constant" and self.r_const is None:
            raise ValueError("r_rule 'constant' needs r_const")

    def r_matrix(self, g):
        """R for one ``G`` (16 x 3) or a batch ``(..., 16, 3)``."""
        if self.r_rule == "gram":
            return self.r * (np.swapaxes(g.conj(), -1, -2) @ g)
        if self.r_rule == "identity":
            return np.broadcast_to(self.r * np.eye(g.shape[-1]), g.shape[:-2] + (g.shape[-1],) * 2)
        rc = _as_matrix(self.r_const, g.shape[-1])
        return np.broadcast_to(rc, g.shape[:-2] + rc.shape)

    def q_matrix(self, g):
        if self.q_rule == "projector":
            gh = np.swapaxes(g.conj(), -1, -2)
            return g @ np.linalg.solve(gh @ g, gh) / self.r
        if self.q_rule == "identity":
            return np.broadcast_to(np.eye(g.shape[-2]) / self.r, g.shape[:-2] + (g.shape[-2],) * 2)
        qc = _as_matrix(self.q_const, g.shape[-2])
        return np.broadcast_to(qc, g.shape[:-2] + qc.shape)

    def describe(self):
        d = {"r": self.r, "q_rule": self.q_rule, "r_rule": self.r_rule}
        for name in ("q_const", "r_const"):
            v = getattr(self, name)
            if v is not None:
                d[name] = np.asarray(v).tolist()
        return d


def _as_matrix(x, dim):
    """Scalars stand for multiples of the identity."""
    x = np.asarray(x)
    return x * np.eye(dim) if x.ndim == 0 else x


@dataclass
class NocSolution:
    grid: np.ndarray
    target: TargetGate
    delta_beta_mat: np.ndarray
    delta_beta_vec: np.ndarray
    g_of_tau: np.ndarray
    s_of_tau: np.ndarray
    c_of_tau: np.ndarray
    delta_y: np.ndarray
    delta_f: np.ndarray
    psi_f: np.ndarray
    eps_noc: float
    eps0: float
    weights: NocWeights
    imag_residue: float
    nominal: dynamics.Trajectory | None = None
    stats: dict = field(default_factory=dict)


def _final_unitary(traj_or_u):
    if isinstance(traj_or_u, dynamics.Trajectory):
        return traj_or_u.final_unitary
    return np.asarray(traj_or_u, dtype=complex)


def target_gate_from_nominal(traj, target_label="01", ambiguity=0.1):
    """Build the target gate from the Bell states the nominal gate lands on.

    Each column ``U0f|c>`` is matched to the Bell state of largest overlap and
    the target column is that Bell state times the overlap's phase. Column 0
    must land on ``target_label``.
    """
    u0f = _final_unitary(traj)
    bells = np.stack([BELL[k] for k in BELL_LABELS])
    overlaps = bells.conj() @ u0f  # [bell, column]
    labels, phases = [], []
    u_tgt = np.zeros((4, 4), dtype=complex)
    for c in range(4):
        mags = np.abs(overlaps[:, c])
        order = np.argsort(mags)[::-1]
        if mags[order[0]] - mags[order[1]] < ambiguity:
            raise AmbiguousTargetError(
                f"column {c}: Bell overlaps {mags[order[0]]:.3f} and {mags[order[1]]:.3f} "
                "are too close; nominal control is too poor for NOC")
        k = order[0]
        theta = float(np.angle(overlaps[k, c]))
        labels.append(BELL_LABELS[k])
        phases.append(theta)
        u_tgt[:, c] = np.exp(1j * theta) * bells[k]
    if labels[0] != target_label:
        raise AmbiguousTargetError(
            f"nominal maps |00> closest to Bell {labels[0]}, not {target_label}")
    if len(set(labels)) != 4:
        raise AmbiguousTargetError(f"Bell labels {labels} are not a permutation")
    return TargetGate(u_tgt=u_tgt, phases=tuple(phases), labels=tuple(labels))


def delta_beta(u0f, tgt):
    """First-order gate defect: ``U0f^+ U_tgt = I - i delta_beta``.

    The global phase of ``U0f^+ U_tgt`` is removed (it cannot be steered by
    traceless generators) and the result is Hermitized. Returns the matrix
    and its column-stacked vector.
    """
    u0f = _final_unitary(u0f)
    u_tgt = tgt.u_tgt if isinstance(tgt, TargetGate) else np.asarray(tgt)
    w = u0f.conj().T @ u_tgt
    tr = np.trace(w)
    if abs(tr) > 0:
        w = w * np.exp(-1j * np.angle(tr))
    db = 1j * (w - np.eye(w.shape[0]))
    db = 0.5 * (db + db.conj().T)
    peak = float(np.max(np.abs(db)))
    if peak > MAX_DELTA_BETA:
        raise LinearizationError(
            f"|delta_beta|_max = {peak:.3f} > {MAX_DELTA_BETA}; first-order NOC not valid")
    return db, vectorize(db)


def interaction_generators(traj, p):
    """``G(tau)``: columns are vec(U0^+ G_j U0) for the three control axes."""
    gens = dynamics.control_generators(p)  # (3, 4, 4)
    u = traj.unitaries
    gbar = np.einsum("nki,jkl,nlm->njim", u.conj(), gens, u, optimize=True)
    return np.ascontiguousarray(np.swapaxes(vectorize(gbar), -1, -2))  # (n, 16, 3)


def _riccati_rhs(s, q, m):
    return -q + s @ m @ s


def _step_matrices(gk, w, tau):
    r = w.r_matrix(gk)
    if np.linalg.cond(r) > 1e12:
        raise SingularWeightError(f"R is singular at tau={tau:.6g}", tau)
    gh = gk.conj().T
    return w.q_matrix(gk), gk @ np.linalg.solve(r, gh)


def solve_riccati(g, w, grid):
    """Backward RK4 solution of ``dS/dtau = -Q + S G R^-1 G^+ S``, ``S(end) = I``.

    ``Q`` and ``G R^-1 G^+`` are evaluated on the grid and averaged at step
    midpoints.
    """
    n = grid.size
    dim = g.shape[1]
    s_all = np.empty((n, dim, dim), dtype=complex)
    s = np.eye(dim, dtype=complex)
    s_all[-1] = s
    q1, m1 = _step_matrices(g[-1], w, grid[-1])
    for k in range(n - 1, 0, -1):
        h = grid[k - 1] - grid[k]
        q0, m0 = _step_matrices(g[k - 1], w, grid[k - 1])
        qm, mm = 0.5 * (q0 + q1), 0.5 * (m0 + m1)
        k1 = _riccati_rhs(s, q1, m1)
        k2 = _riccati_rhs(s + 0.5 * h * k1, qm, mm)
        k3 = _riccati_rhs(s + 0.5 * h * k2, qm, mm)
        k4 = _riccati_rhs(s + h * k3, q0, m0)
        s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s_all[k - 1] = s
        q1, m1 = q0, m0
    return s_all


def gain_matrix(g, s, w):
    """``C = R^-1 G^+ S`` at every grid point."""
    r = w.r_matrix(g)
    conds = np.linalg.cond(r)
    if np.any(conds > 1e12):
        raise SingularWeightError(f"R is singular at grid index {int(np.argmax(conds))}")
    ghs = np.swapaxes(g.conj(), -1, -2) @ s
    return np.linalg.solve(r, ghs)


def integrate_delta_y(c, g, delta_beta_vec, grid):
    """RK4 solution of ``d(dy)/dtau = -G C dy`` from ``dy(start) = -delta_beta``."""
    n = grid.size
    y = np.empty((n, g.shape[1]), dtype=complex)
    y[0] = -np.asarray(delta_beta_vec)
    a1 = g[0] @ c[0]
    for k in range(n - 1):
        h = grid[k + 1] - grid[k]
        a0, a1 = a1, g[k + 1] @ c[k + 1]
        am = 0.5 * (a0 + a1)
        yk = y[k]
        k1 = -a0 @ yk
        k2 = -am @ (yk + 0.5 * h * k1)
        k3 = -am @ (yk + 0.5 * h * k2)
        k4 = -a1 @ (yk + h * k3)
        y[k + 1] = yk + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise NocError("delta_y integration produced non-finite values")
    return y


def control_modification(c, delta_y, residue_tol=1e-3):
    """Feedback law ``dF = -C dy``; returns ``(real dF, max imaginary residue)``."""
    df = -np.einsum("nij,nj->ni", c, delta_y)
    residue = float(np.max(np.abs(df.imag))) if df.size else 0.0
    if residue > residue_tol:
        raise NocError(f"imaginary residue {residue:.3e} in dF exceeds {residue_tol}")
    if residue > 1e-6:
        log.warning("dF imaginary residue %.3e", residue)
    real = np.ascontiguousarray(df.real)
    if np.max(np.abs(real), initial=0.0) > MAX_DELTA_F:
        raise NocError("control modification diverged")
    return real, residue


def repropagate(p, delta_f, grid, *, tol=dynamics.DEFAULT_TOL, target=None,
                phase_noise=None, backend=None):
    """Propagate |00> under ``H0 + sum_j G_j dF_j``; returns ``(psi_f, eps)``."""
    psi = dynamics.trp_final_state(p, tol=tol, grid=grid, delta_f=delta_f,
                                   phase_noise=phase_noise, backend=backend)
    return psi, dynamics.error_vs_target(psi, target)


def cost(delta_y, delta_f, g, w, grid):
    """Terminal plus integrated quadratic cost (the multiplier term vanishes on shell)."""
    terminal = float(np.vdot(delta_y[-1], delta_y[-1]).real)
    q = w.q_matrix(g)
    r = w.r_matrix(g)
    state_term = np.einsum("ni,nij,nj->n", delta_y.conj(), q, delta_y).real
    control_term = 0.5 * np.einsum("ni,nij,nj->n", delta_f, r, delta_f).real
    return terminal + float(np.trapezoid(state_term + control_term, grid))


def solve_noc(p, weights=None, *, grid_n=dynamics.DEFAULT_GRID_N, tol=dynamics.DEFAULT_TOL,
              nominal=None, target=None, backend=None):
    """Run the whole NOC pipeline for ``p`` and return a :class:`NocSolution`."""
    weights = weights or NocWeights()
    if nominal is None:
        nominal = dynamics.trp_trajectory(p, tol=tol, grid_n=grid_n, backend=backend)
    grid = nominal.grid
    eps0 = dynamics.error_vs_target(nominal.final_unitary[:, 0])
    if target is None:
        target = target_gate_from_nominal(nominal)
    db_mat, db_vec = delta_beta(nominal.final_unitary, target)
    g = interaction_generators(nominal, p)
    s = solve_riccati(g, weights, grid)
    c = gain_matrix(g, s, weights)
    dy = integrate_delta_y(c, g, db_vec, grid)
    df, residue = control_modification(c, dy)
    psi_f, eps = repropagate(p, df, grid, tol=tol, backend=backend)
    log.info("NOC: eps0=%.4e eps_noc=%.4e", eps0, eps)
    return NocSolution(grid=grid, target=target, delta_beta_mat=db_mat, delta_beta_vec=db_vec,
                       g_of_tau=g, s_of_tau=s, c_of_tau=c, delta_y=dy, delta_f=df,
                       psi_f=psi_f, eps_noc=eps, eps0=eps0, weights=weights,
                       imag_residue=residue, nominal=nominal)
