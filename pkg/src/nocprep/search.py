"""Simulated-annealing search over TRP parameters."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import PARAM_NAMES, TrpParams

log = logging.getLogger(__name__)

POSITIVE = ("eta4", "lam")


@dataclass(frozen=True)
class AnnealConfig:
    t0: float = 100.0
    cooling: float = 0.95
    steps_per_temp: int = 20
    t_min: float = 1e-6
    max_evals: int = 20000
    proposal_scale: float = 0.3
    proposal_scale_min: float | None = 0.001  # widths log-uniform in [min, scale]; None = fixed
    proposal_floor: float = 1e-6
    params: tuple = PARAM_NAMES
    target_eps: float | None = None  # stop the chain once best <= target
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.cooling < 1.0:
            raise ValueError("cooling must lie in (0, 1)")
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if self.steps_per_temp < 1 or self.max_evals < 1:
            raise ValueError("steps_per_temp and max_evals must be positive")
        if self.proposal_scale <= 0 or self.proposal_floor <= 0:
            raise ValueError("proposal widths must be positive")
        if self.proposal_scale_min is not None and not (
                0 < self.proposal_scale_min <= self.proposal_scale):
            raise ValueError("proposal_scale_min must lie in (0, proposal_scale]")
        bad = set(self.params) - set(PARAM_NAMES)
        if bad:
            raise ValueError(f"unknown parameters {sorted(bad)}")

    def to_dict(self):
        d = dict(self.__dict__)
        d["params"] = list(self.params)
        d["proposal"] = ("gaussian, one uniformly chosen parameter per move, "
                         "sd = scale * |value| (floored; scale log-uniform in [proposal_scale_min, "
                         "proposal_scale] when the minimum is set), reflected at 0 for eta4 and lam")
        return d


@dataclass
class AnnealResult:
    best_params: TrpParams
    best_eps: float
    history: list = field(default_factory=list)  # (eval index, eps, temperature, accepted)
    seed: int = 0
    n_evals: int = 0
    n_failures: int = 0
    start_eps: float = float("nan")


def default_objective(p):
    return dynamics.nominal_error(p)


def metropolis_accept(delta, temperature, rng):
    """Accept downhill moves always and uphill ones with ``exp(-delta / T)``."""
    if delta <= 0.0:
        return True
    if temperature <= 0.0:
        return False
    return rng.random() < math.exp(-delta / temperature)


def propose(p, cfg, rng):
    name = cfg.params[rng.integers(len(cfg.params))]
    value = getattr(p, name)
    frac = cfg.proposal_scale
    if cfg.proposal_scale_min is not None:
        frac = math.exp(rng.uniform(math.log(cfg.proposal_scale_min), math.log(frac)))
    width = max(frac * abs(value), cfg.proposal_floor)
    new = value + width * rng.standard_normal()
    if name in POSITIVE:
        new = abs(new)
        if new == 0.0:
            new = cfg.proposal_floor
    return p.replace(**{name: new})


def anneal(start, cfg=None, objective=None):
    """Minimize ``objective(params)`` by Metropolis annealing from ``start``.

    The temperature drops by ``cfg.cooling`` every ``steps_per_temp`` moves.
    Failing evaluations count as rejected moves.
    """
    cfg = cfg or AnnealConfig()
    objective = objective or default_objective
    rng = np.random.default_rng(cfg.seed)

    current = start
    cur_eps = float(objective(start))
    best, best_eps = current, cur_eps
    history = [(0, cur_eps, cfg.t0, True)]
    n_evals, n_fail = 1, 0
    temperature = cfg.t0

    def reached():
        return cfg.target_eps is not None and best_eps <= cfg.target_eps

    while temperature >= cfg.t_min and n_evals < cfg.max_evals and not reached():
        for _ in range(cfg.steps_per_temp):
            if n_evals >= cfg.max_evals or reached():
                break
            cand = propose(current, cfg, rng)
            n_evals += 1
            try:
                eps = float(objective(cand))
                if not math.isfinite(eps):
                    raise FloatingPointError("non-finite objective")
            except (ArithmeticError, ValueError, RuntimeError) as exc:
                n_fail += 1
                log.debug("evaluation %d failed: %s", n_evals, exc)
                history.append((n_evals - 1, float("nan"), temperature, False))
                continue
            ok = metropolis_accept(eps - cur_eps, temperature, rng)
            history.append((n_evals - 1, eps, temperature, ok))
            if ok:
                current, cur_eps = cand, eps
                if eps < best_eps:
                    best, best_eps = cand, eps
        temperature *= cfg.cooling
    return AnnealResult(best_params=best, best_eps=best_eps, history=history, seed=cfg.seed,
                        n_evals=n_evals, n_failures=n_fail, start_eps=history[0][1])


def anneal_chains(start, cfg, seeds, objective=None, jobs=None):
    """Run independent chains (one per seed); returns results sorted by best eps."""
    jobs = jobs or os.cpu_count() or 1
    cfgs = [AnnealConfig(**{**cfg.__dict__, "seed": int(s)}) for s in seeds]
    if jobs <= 1 or len(cfgs) <= 1:
        results = [anneal(start, c, objective) for c in cfgs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda c: anneal(start, c, objective), cfgs))
    return sorted(results, key=lambda r: r.best_eps)
