"""Non-ideal control: finite-precision sweeps, timing jitter, bandwidth, units."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from . import dynamics, noc
from .dynamics import PARAM_NAMES, TrpParams


def _map(fn, items, jobs):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    # the compiled kernel releases the GIL, so threads run concurrently
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# finite precision

def last_digit_step(value):
    """One unit in the last printed decimal place of ``value``.

    ``4.526e-4 -> 1e-7``, ``9.579 -> 1e-3``, ``0.918 -> 1e-3``, ``120.0 -> 1``.
    """
    exp = Decimal(repr(float(value))).normalize().as_tuple().exponent
    return 10.0 ** min(exp, 0)


@dataclass(frozen=True)
class SweepSpec:
    param: str
    offsets: tuple | None = None
    reuse_delta_f: bool = True
    rederive_target: bool = False

    def __post_init__(self):
        if self.param not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {self.param!r}; choose from {PARAM_NAMES}")

    def resolved_offsets(self, base):
        if self.offsets is not None:
            offs = tuple(float(o) for o in self.offsets)
        else:
            step = last_digit_step(getattr(base, self.param))
            offs = (-step, 0.0, step)
        return offs


def _decimals(x):
    return max(0, -Decimal(repr(abs(float(x)))).normalize().as_tuple().exponent)


def _perturbed_value(base_value, offset):
    # round to the printed precision so 4.526e-4 - 1e-7 is exactly 4.525e-4
    if offset == 0.0:
        return base_value
    return round(base_value + offset, max(_decimals(offset), _decimals(base_value)))


def sensitivity_sweep(base, spec, solution, *, tol=dynamics.DEFAULT_TOL, jobs=None,
                      backend=None):
    """Error probability as one parameter is shifted away from ``base``.

    ``solution`` is the :class:`noc.NocSolution` for ``base``. By default its
    control modification is reused unchanged on the perturbed nominal control.
    Returns a list of row dicts sorted by parameter value.
    """
    offsets = spec.resolved_offsets(base)
    base_value = getattr(base, spec.param)

    def run(offset):
        value = _perturbed_value(base_value, offset)
        p = base.replace(**{spec.param: value})
        if offset == 0.0:
            eps = solution.eps_noc
        elif spec.reuse_delta_f:
            _, eps = noc.repropagate(p, solution.delta_f, solution.grid, tol=tol,
                                     backend=backend)
        else:
            target = None if spec.rederive_target else solution.target
            sol = noc.solve_noc(p, solution.weights, grid_n=solution.grid.size - 1,
                                tol=tol, target=target, backend=backend)
            eps = sol.eps_noc
        return {"param": spec.param, "value": value, "offset": offset, "eps": eps}

    rows = _map(run, list(offsets), jobs)
    return sorted(rows, key=lambda r: r["value"])


def most_sensitive(tables):
    """Parameter whose worst perturbed row has the largest error probability."""
    worst = {name: max(r["eps"] for r in rows if r["offset"] != 0.0)
             for name, rows in tables.items()}
    return max(worst, key=worst.get)


# --------------------------------------------------------------------------
# timing jitter

@dataclass(frozen=True)
class JitterModel:
    """Shot-noise model of AWG clock jitter acting on the twist phase.

    Events arrive as a Poisson process with ``rate`` events per unit of
    dimensionless time (default: one per clock tick, ``f_clock * T / tau0``).
    Each event adds a kick drawn from ``N(0, sigma_phi)`` to the phase error.
    With ``cumulative=False`` the phase error is instead redrawn at each
    event, so ``sigma_phi`` is its stationary deviation.
    """

    f_clock: float = 1e9
    sigma_t: float = 5.03e-12
    T: float = 5e-6
    tau0: float = 120.0
    rate: float | None = None
    cumulative: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.f_clock <= 0 or self.T <= 0 or self.tau0 <= 0:
            raise ValueError("f_clock, T and tau0 must be positive")
        if self.sigma_t < 0:
            raise ValueError("sigma_t must be non-negative")
        if self.rate is not None and self.rate < 0:
            raise ValueError("rate must be non-negative")

    @property
    def sigma_phi(self):
        return 2.0 * math.pi * self.f_clock * self.sigma_t

    @property
    def event_rate(self):
        if self.rate is not None:
            return self.rate
        return self.f_clock * self.T / self.tau0

    def to_dict(self):
        return {"f_clock": self.f_clock, "sigma_t": self.sigma_t, "T": self.T,
                "tau0": self.tau0, "rate": self.event_rate, "cumulative": self.cumulative,
                "seed": self.seed, "sigma_phi": self.sigma_phi}


def realization_seed(master, index):
    return np.random.SeedSequence(entropy=master, spawn_key=(index,))


def jitter_realization(model, span, rng):
    """One phase-noise path ``(event_times, values)`` on ``span = (start, end)``.

    ``values[j]`` is the twist-phase offset from ``event_times[j]`` up to the
    next event; before the first event the offset is zero.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    start, end = span
    if model.sigma_t == 0.0:
        return np.empty(0), np.empty(0)
    n = rng.poisson(model.event_rate * (end - start))
    times = np.sort(rng.uniform(start, end, n))
    draws = rng.normal(0.0, model.sigma_phi, n)
    values = np.cumsum(draws) if model.cumulative else draws
    return times, values


def sample_path(times, values, tau):
    """Evaluate a piecewise-constant path at ``tau``."""
    idx = np.searchsorted(times, tau, side="right")
    padded = np.concatenate([[0.0], values])
    return padded[idx]


@dataclass
class JitterEnsemble:
    mean: float
    std: float
    eps: list
    seeds: list = field(default_factory=list)


def jitter_ensemble(p, solution, model, n_realizations, *, tol=dynamics.DEFAULT_TOL,
                    jobs=None, backend=None):
    """Noisy nominal control plus the jitter-free NOC modification, averaged."""
    if n_realizations < 2:
        raise ValueError("need at least two realizations")
    span = p.span

    def run(index):
        if model.sigma_t == 0.0:
            return solution.eps_noc
        rng = np.random.default_rng(realization_seed(model.seed, index))
        noise = jitter_realization(model, span, rng)
        _, eps = noc.repropagate(p, solution.delta_f, solution.grid, tol=tol,
                                 phase_noise=noise, backend=backend)
        return eps

    eps = _map(run, list(range(n_realizations)), jobs)
    arr = np.asarray(eps)
    return JitterEnsemble(mean=float(arr.mean()), std=float(arr.std(ddof=1)), eps=list(eps),
                          seeds=[[model.seed, i] for i in range(n_realizations)])


# --------------------------------------------------------------------------
# bandwidth

@dataclass
class Spectrum:
    omega: np.ndarray  # ascending, dimensionless angular frequency
    magnitude: np.ndarray  # (n, 3)
    cutoff: np.ndarray  # per component
    peak_omega: np.ndarray
    threshold: float


def _power_of_two(n):
    return n > 0 and n & (n - 1) == 0


def bandwidth(delta_f, grid, threshold=0.02):
    """Spectrum of each control component and its ``threshold``-of-peak cutoff.

    The cutoff is the smallest ``w0`` with ``|dF(w)| <= threshold * peak`` for
    all ``|w| >= w0``. A grid of ``2**k + 1`` points (closed interval) drops
    the final sample.
    """
    grid = np.asarray(grid, dtype=float)
    x = np.asarray(delta_f, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    steps = np.diff(grid)
    dtau = steps[0]
    if not np.allclose(steps, dtau, rtol=1e-9, atol=0.0):
        raise ValueError("bandwidth needs a uniform grid")
    n = grid.size
    if not _power_of_two(n):
        if _power_of_two(n - 1):
            n -= 1
            x = x[:n]
        else:
            raise ValueError(f"grid length {grid.size} is not a power of two")
    spec = np.abs(np.fft.fft(x, axis=0)) * dtau
    omega = 2.0 * math.pi * np.fft.fftfreq(n, dtau)
    order = np.argsort(omega, kind="stable")
    omega, spec = omega[order], spec[order]
    absw = np.abs(omega)
    by_abs = np.argsort(absw, kind="stable")
    cut, peak_w = [], []
    for j in range(spec.shape[1]):
        m = spec[:, j]
        peak = m.max()
        peak_w.append(omega[np.argmax(m)])
        above = np.nonzero(m[by_abs] > threshold * peak)[0]
        if above.size == 0:
            cut.append(0.0)
            continue
        last = above[-1]
        # next distinct |w| beyond the last sample above threshold
        w_last = absw[by_abs][last]
        bigger = absw[absw > w_last]
        cut.append(float(bigger.min()) if bigger.size else float(w_last))
    return Spectrum(omega=omega, magnitude=spec, cutoff=np.array(cut),
                    peak_omega=np.array(peak_w), threshold=threshold)


# --------------------------------------------------------------------------
# units (hbar = 1; energies as angular frequencies in 1/s)

@dataclass(frozen=True)
class DimensionfulParams:
    """Lab parameters: ``a`` in 1/s^2, ``b1, b2, delta_omega, Delta, J_z, J_xy``
    in 1/s, ``B`` in 1/s^5, ``T`` in s."""

    T: float
    a: float
    b1: float
    b2: float
    B: float
    Delta: float
    delta_omega: float
    J_z: float
    J_xy: float

    @property
    def time_scale(self):
        """Dimensionless time per second, ``a / b2``."""
        return self.a / self.b2


def to_dimensionful(p, T):
    if not T > 0:
        raise ValueError("T must be positive")
    b2 = p.tau0 / (T * p.lam)
    a = p.lam * b2 * b2
    k = a / b2
    return DimensionfulParams(T=T, a=a, b1=p.d3 * b2, b2=b2, B=p.eta4 * a ** 3 / b2 ** 2,
                              Delta=p.d2 * k, delta_omega=p.d1 * k, J_z=p.dz * k,
                              J_xy=p.dxy * k)


def from_dimensionful(q):
    """Inverse of :func:`to_dimensionful`; returns ``(TrpParams, T)``."""
    if not q.T > 0:
        raise ValueError("T must be positive")
    k = q.b2 / q.a
    p = TrpParams(eta4=q.B * q.b2 ** 2 / q.a ** 3, lam=q.a / q.b2 ** 2,
                  d1=q.delta_omega * k, d2=q.Delta * k, d3=q.b1 / q.b2,
                  dz=q.J_z * k, dxy=q.J_xy * k, tau0=q.a * q.T / q.b2)
    return p, q.T


def dimensionful_bandwidth(cutoff, p, T):
    """Convert a dimensionless angular cutoff to 1/s via ``tau0 / T``."""
    return cutoff * p.tau0 / T
