"""Run configuration files (TOML) and atomic report writing."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import warnings
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import dynamics
from .dynamics import PARAM_NAMES, TrpParams
from .noc import NocWeights
from .robustness import JitterModel
from .search import AnnealConfig


class ConfigError(ValueError):
    """Invalid configuration; ``line``/``column`` are set for parse errors."""

    def __init__(self, msg, line=None, column=None):
        super().__init__(msg)
        self.line = line
        self.column = column


PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")

PARAM_ALIASES = {"lambda": "lam", "eta_4": "eta4", "d_1": "d1", "d_2": "d2", "d_3": "d3",
                 "d_z": "dz", "d_xy": "dxy", "tau_0": "tau0"}


def canonical_param(name):
    """Map user spellings such as ``d_xy`` or ``lambda`` to field names."""
    key = PARAM_ALIASES.get(name, name)
    if key not in PARAM_NAMES:
        raise ConfigError(f"unknown parameter {name!r}; choose from "
                          f"{', '.join(('lambda' if n == 'lam' else n) for n in PARAM_NAMES)}")
    return key


# keys accepted in each table; anything else warns
SECTIONS = {
    "params": {"eta4", "lambda", "lam", "d1", "d2", "d3", "dz", "dxy", "tau0"},
    "run": {"grid_n", "tol", "seed", "jobs", "out", "backend"},
    "noc": {"r", "q_rule", "r_rule", "q_const", "r_const"},
    "sweep": {"params", "offsets", "reuse_delta_f", "rederive_target"},
    "jitter": {"f_clock", "sigma_t", "T", "rate", "cumulative", "n_realizations"},
    "anneal": {"t0", "cooling", "steps_per_temp", "t_min", "max_evals", "proposal_scale",
               "proposal_scale_min", "proposal_floor", "target_eps", "seeds", "start"},
    "units": {"T"},
    "bandwidth": {"threshold"},
}


@dataclass
class RunConfig:
    params: TrpParams = dynamics.TABLE1
    weights: NocWeights = field(default_factory=NocWeights)
    grid_n: int = dynamics.DEFAULT_GRID_N
    tol: float = dynamics.DEFAULT_TOL
    seed: int = 0
    jobs: int = 0
    out: str = "out"
    backend: str | None = None
    sweep_params: tuple = PARAM_NAMES
    sweep_offsets: tuple | None = None
    reuse_delta_f: bool = True
    rederive_target: bool = False
    jitter: JitterModel = field(default_factory=JitterModel)
    n_realizations: int = 10
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    anneal_seeds: tuple = (0, 1, 2)
    anneal_start: TrpParams = dynamics.ANNEAL_START
    T: float = 5e-6
    threshold: float = 0.02

    def validate(self):
        if self.grid_n < 2 or self.grid_n & (self.grid_n - 1):
            raise ConfigError(f"run.grid_n must be a power of two, got {self.grid_n}")
        if not self.tol > 0:
            raise ConfigError(f"run.tol must be positive, got {self.tol}")
        if self.jobs < 0:
            raise ConfigError("run.jobs must be >= 0 (0 means all cores)")
        if self.n_realizations < 2:
            raise ConfigError("jitter.n_realizations must be at least 2")
        if not self.T > 0:
            raise ConfigError(f"units.T must be positive, got {self.T}")
        if not 0 < self.threshold < 1:
            raise ConfigError("bandwidth.threshold must lie in (0, 1)")
        if self.backend not in (None, "python", "cython"):
            raise ConfigError(f"run.backend must be 'python' or 'cython', got {self.backend!r}")
        if self.seed < 0:
            raise ConfigError("run.seed must be non-negative")
        return self

    def to_dict(self):
        """Plain-data echo that :func:`from_dict` turns back into this config."""
        def params(p):
            d = p.to_dict()
            d["lambda"] = d.pop("lam")
            return d

        w = self.weights
        jm = self.jitter
        a = self.anneal
        return {
            "params": params(self.params),
            "run": {"grid_n": self.grid_n, "tol": self.tol, "seed": self.seed,
                    "jobs": self.jobs, "out": self.out, "backend": self.backend},
            "noc": {"r": w.r, "q_rule": w.q_rule, "r_rule": w.r_rule,
                    "q_const": w.q_const, "r_const": w.r_const},
            "sweep": {"params": list(self.sweep_params),
                      "offsets": None if self.sweep_offsets is None else list(self.sweep_offsets),
                      "reuse_delta_f": self.reuse_delta_f,
                      "rederive_target": self.rederive_target},
            "jitter": {"f_clock": jm.f_clock, "sigma_t": jm.sigma_t, "T": jm.T,
                       "rate": jm.rate, "cumulative": jm.cumulative,
                       "n_realizations": self.n_realizations},
            "anneal": {"t0": a.t0, "cooling": a.cooling, "steps_per_temp": a.steps_per_temp,
                       "t_min": a.t_min, "max_evals": a.max_evals,
                       "proposal_scale": a.proposal_scale,
                       "proposal_scale_min": a.proposal_scale_min or 0.0,
                       "proposal_floor": a.proposal_floor,
                       "target_eps": a.target_eps, "seeds": list(self.anneal_seeds),
                       "start": params(self.anneal_start)},
            "units": {"T": self.T},
            "bandwidth": {"threshold": self.threshold},
        }


def _params_from(section, where, base):
    d = {PARAM_ALIASES.get(k, k): v for k, v in section.items()}
    for k, v in d.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{where}.{k} must be a number, got {v!r}")
    if d.get("lam", 1.0) <= 0:
        raise ConfigError(f"{where}.lambda must be positive, got {d['lam']}")
    if d.get("tau0", 1.0) <= 0:
        raise ConfigError(f"{where}.tau0 must be positive, got {d['tau0']}")
    merged = {**base.to_dict(), **{k: float(v) for k, v in d.items()}}
    try:
        return TrpParams(**merged)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _get(section, key, kind, where, default):
    if key not in section or section[key] is None:
        return default
    v = section[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is int and isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, kind) or (kind is not bool and isinstance(v, bool)):
        raise ConfigError(f"{where}.{key} must be {kind.__name__}, got {v!r}")
    return v


def from_dict(data, source="<config>"):
    """Build a validated :class:`RunConfig` from parsed key-value data."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a table")
    for name, section in data.items():
        if name not in SECTIONS:
            warnings.warn(f"{source}: unknown section [{name}] ignored", stacklevel=2)
            continue
        if not isinstance(section, dict):
            raise ConfigError(f"{source}: [{name}] must be a table")
        for key in section:
            if key not in SECTIONS[name]:
                warnings.warn(f"{source}: unknown key {name}.{key} ignored", stacklevel=2)
    sec = {name: dict(data.get(name) or {}) for name in SECTIONS}
    for name in sec:
        sec[name] = {k: v for k, v in sec[name].items() if k in SECTIONS[name]}

    cfg = RunConfig()
    cfg.params = _params_from(sec["params"], "params", dynamics.TABLE1)

    run = sec["run"]
    cfg.grid_n = _get(run, "grid_n", int, "run", cfg.grid_n)
    cfg.tol = _get(run, "tol", float, "run", cfg.tol)
    cfg.seed = _get(run, "seed", int, "run", cfg.seed)
    cfg.jobs = _get(run, "jobs", int, "run", cfg.jobs)
    cfg.out = _get(run, "out", str, "run", cfg.out)
    cfg.backend = _get(run, "backend", str, "run", cfg.backend)

    n = sec["noc"]
    try:
        cfg.weights = NocWeights(r=_get(n, "r", float, "noc", 70.0),
                                 q_rule=_get(n, "q_rule", str, "noc", "projector"),
                                 r_rule=_get(n, "r_rule", str, "noc", "gram"),
                                 q_const=_get(n, "q_const", float, "noc", None),
                                 r_const=_get(n, "r_const", float, "noc", None))
    except ValueError as exc:
        raise ConfigError(f"noc: {exc}") from None

    s = sec["sweep"]
    names = _get(s, "params", list, "sweep", list(PARAM_NAMES))
    cfg.sweep_params = tuple(canonical_param(x) for x in names)
    offs = _get(s, "offsets", list, "sweep", None)
    cfg.sweep_offsets = None if offs is None else tuple(float(o) for o in offs)
    cfg.reuse_delta_f = _get(s, "reuse_delta_f", bool, "sweep", True)
    cfg.rederive_target = _get(s, "rederive_target", bool, "sweep", False)

    j = sec["jitter"]
    try:
        cfg.jitter = JitterModel(f_clock=_get(j, "f_clock", float, "jitter", 1e9),
                                 sigma_t=_get(j, "sigma_t", float, "jitter", 5.03e-12),
                                 T=_get(j, "T", float, "jitter", 5e-6),
                                 tau0=cfg.params.tau0,
                                 rate=_get(j, "rate", float, "jitter", None),
                                 cumulative=_get(j, "cumulative", bool, "jitter", True),
                                 seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"jitter: {exc}") from None
    cfg.n_realizations = _get(j, "n_realizations", int, "jitter", cfg.n_realizations)

    a = sec["anneal"]
    try:
        cfg.anneal = AnnealConfig(
            t0=_get(a, "t0", float, "anneal", AnnealConfig.t0),
            cooling=_get(a, "cooling", float, "anneal", AnnealConfig.cooling),
            steps_per_temp=_get(a, "steps_per_temp", int, "anneal", AnnealConfig.steps_per_temp),
            t_min=_get(a, "t_min", float, "anneal", AnnealConfig.t_min),
            max_evals=_get(a, "max_evals", int, "anneal", AnnealConfig.max_evals),
            proposal_scale=_get(a, "proposal_scale", float, "anneal", AnnealConfig.proposal_scale),
            # 0 selects a fixed proposal width (TOML has no null)
            proposal_scale_min=_get(a, "proposal_scale_min", float, "anneal",
                                    AnnealConfig.proposal_scale_min) or None,
            proposal_floor=_get(a, "proposal_floor", float, "anneal", AnnealConfig.proposal_floor),
            target_eps=_get(a, "target_eps", float, "anneal", None),
            seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"anneal: {exc}") from None
    cfg.anneal_seeds = tuple(int(x) for x in _get(a, "seeds", list, "anneal", [0, 1, 2]))
    start = _get(a, "start", dict, "anneal", {})
    cfg.anneal_start = _params_from(start, "anneal.start", dynamics.ANNEAL_START)

    cfg.T = _get(sec["units"], "T", float, "units", cfg.T)
    cfg.threshold = _get(sec["bandwidth"], "threshold", float, "bandwidth", cfg.threshold)
    return cfg.validate()


def load_config(path):
    """Load a TOML config, or the config echoed inside a ``report.json``.

    A bare name such as ``table1.cfg`` that does not exist locally falls back
    to the bundled presets.
    """
    path = os.fspath(path)
    preset = os.path.join(PRESET_DIR, os.path.basename(path))
    if not os.path.isfile(path) and os.path.isfile(preset):
        path = preset
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".json"):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}",
                              exc.lineno, exc.colno) from None
        if "config" in data:
            data = data["config"]
        data = _drop_nulls(data)
    else:
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
            raise ConfigError(f"{path}:{line}:{col}: {exc}", line, col) from None
    return from_dict(data, source=path)


def _drop_nulls(d):
    if isinstance(d, dict):
        return {k: _drop_nulls(v) for k, v in d.items() if v is not None}
    return d


# --------------------------------------------------------------------------
# output

def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def ensure_dir(directory):
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {directory!r}: {exc}") from None
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"output directory {directory!r} is not writable")
    return directory


def _jsonable(x):
    import numpy as np

    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def write_report(report, directory):
    """Write ``report.json`` atomically (temp file + rename); returns its path."""
    ensure_dir(directory)
    path = os.path.join(directory, "report.json")
    _atomic_write(path, json.dumps(_jsonable(report), indent=2, allow_nan=True) + "\n")
    return path


def format_number(x):
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    """Write rows atomically; floats use 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_number(v) if isinstance(v, float) or hasattr(v, "dtype") else v
                    for v in row])
    _atomic_write(path, buf.getvalue())
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def params_toml(p):
    """TOML ``[params]`` block for ``p`` (full float precision)."""
    lines = ["[params]"]
    for f in fields(p):
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key} = {float(getattr(p, f.name))!r}")
    return "\n".join(lines) + "\n"
