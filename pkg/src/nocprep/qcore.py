"""Dense linear-algebra helpers for two-qubit states and operators.

Basis ordering is |00>, |01>, |10>, |11> with qubit 1 the left (most
significant) Kronecker factor. Matrices are plain complex numpy arrays.
"""

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
PAULIS = {"x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}

_SQRT_HALF = 1.0 / np.sqrt(2.0)

#: Bell states keyed by their label ``ij``.
BELL = {
    "00": np.array([1, 0, 0, 1], dtype=complex) * _SQRT_HALF,
    "10": np.array([1, 0, 0, -1], dtype=complex) * _SQRT_HALF,
    "01": np.array([0, 1, 1, 0], dtype=complex) * _SQRT_HALF,
    "11": np.array([0, 1, -1, 0], dtype=complex) * _SQRT_HALF,
}
BELL_LABELS = ("00", "10", "01", "11")


class NotNormalizedError(ValueError):
    pass


def kron(a, b):
    """Kronecker product ``a (x) b``."""
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def pauli_on(axis, qubit):
    """Pauli ``axis`` acting on ``qubit`` (1 or 2) of the two-qubit register."""
    s = PAULIS[axis]
    if qubit == 1:
        return kron(s, IDENTITY_2)
    if qubit == 2:
        return kron(IDENTITY_2, s)
    raise ValueError(f"qubit must be 1 or 2, got {qubit!r}")


def basis_state(label):
    """Computational basis state from a bit string such as ``"01"``."""
    v = np.zeros(2 ** len(label), dtype=complex)
    v[int(label, 2)] = 1.0
    return v


def bell_basis():
    """The four Bell states as rows, in ``BELL_LABELS`` order."""
    return np.stack([BELL[k] for k in BELL_LABELS])


def vectorize(m):
    """Stack the columns of ``m`` (or of each matrix in a batch) into a vector."""
    m = np.asarray(m)
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (m.shape[-1] * m.shape[-2],))


def unvectorize(v, rows, cols):
    """Inverse of :func:`vectorize`."""
    v = np.asarray(v)
    if v.shape[-1] != rows * cols:
        raise ValueError(f"vector length {v.shape[-1]} does not match {rows}x{cols}")
    return np.swapaxes(v.reshape(v.shape[:-1] + (cols, rows)), -1, -2)


def fidelity_error(psi, target, atol=1e-6):
    """Return ``(F, eps)`` with ``F = |<psi|target>|`` and ``eps = 1 - F**2``."""
    psi = np.asarray(psi, dtype=complex)
    target = np.asarray(target, dtype=complex)
    for name, v in (("psi", psi), ("target", target)):
        dev = abs(np.linalg.norm(v) - 1.0)
        if dev > atol:
            raise NotNormalizedError(f"{name} norm deviates from 1 by {dev:.3e}")
    f = abs(np.vdot(psi, target))
    eps = min(max(1.0 - f * f, 0.0), 1.0)
    return f, eps


def unitarity_drift(u):
    """``max |U^dagger U - I|`` over entries (and over a batch if given)."""
    u = np.asarray(u)
    gram = np.swapaxes(u.conj(), -1, -2) @ u
    return float(np.max(np.abs(gram - np.eye(u.shape[-1]))))


def check_unitary(u, tol):
    u = np.asarray(u)
    if u.ndim < 2 or u.shape[-1] != u.shape[-2]:
        raise ValueError("check_unitary needs square matrices")
    return unitarity_drift(u) <= tol


def polar_snap(u):
    """Nearest unitary (polar factor) of ``u`` or of each matrix in a batch."""
    w, _, vh = np.linalg.svd(u)
    return w @ vh


def is_hermitian(h, tol=1e-12):
    h = np.asarray(h)
    return float(np.max(np.abs(h - np.swapaxes(h.conj(), -1, -2)))) <= tol
