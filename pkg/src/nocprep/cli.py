"""Command-line front end: ``nocprep <subcommand> [--config FILE] ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
import warnings

import numpy as np

from . import __version__, dynamics, kernel, noc, robustness, search
from .config import (
    ConfigError,
    RunConfig,
    canonical_param,
    ensure_dir,
    load_config,
    params_toml,
    write_csv,
    write_report,
)
from .qcore import BELL, BELL_LABELS

log = logging.getLogger("nocprep")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
SUBCOMMANDS = ("nominal", "noc", "sweep", "jitter", "anneal", "bandwidth", "units")
NUMERICAL_ERRORS = (dynamics.PropagationError, noc.NocError, ArithmeticError,
                    np.linalg.LinAlgError)


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1 rather than argparse's 2, which is reserved here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file or a previous report.json")
    common.add_argument("--out", help="output directory (default: run.out)")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--jobs", type=int, help="worker threads (default: all cores)")
    common.add_argument("--grid-n", type=int, help="storage grid intervals, a power of two")
    common.add_argument("--tol", type=float, help="integrator relative tolerance")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="nocprep",
                     description="Neighboring-optimal-control Bell-state preparation with TRP.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}",
                                parser_class=_Parser)
    sub.required = True
    sub.add_parser("nominal", parents=[common], help="propagate the nominal TRP control")
    sub.add_parser("noc", parents=[common], help="compute and apply the NOC correction")
    sp = sub.add_parser("sweep", parents=[common], help="finite-precision sensitivity sweep")
    sp.add_argument("--param", help="parameter to perturb (default: all seven)")
    jp = sub.add_parser("jitter", parents=[common], help="timing-jitter Monte Carlo")
    jp.add_argument("--sigma-t", type=float, help="timing deviation in seconds")
    jp.add_argument("--f-clock", type=float, help="AWG clock frequency in Hz")
    jp.add_argument("--n", type=int, dest="n_realizations", help="number of realizations")
    sub.add_parser("anneal", parents=[common], help="simulated-annealing parameter search")
    bp = sub.add_parser("bandwidth", parents=[common], help="spectrum of the NOC correction")
    bp.add_argument("--T", type=float, help="control duration in seconds")
    up = sub.add_parser("units", parents=[common], help="dimensionful parameter values")
    up.add_argument("--T", type=float, help="control duration in seconds")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.grid_n is not None:
        cfg.grid_n = args.grid_n
    if args.tol is not None:
        cfg.tol = args.tol
    jm = cfg.jitter
    jitter_changes = {"seed": cfg.seed, "tau0": cfg.params.tau0}
    if getattr(args, "sigma_t", None) is not None:
        jitter_changes["sigma_t"] = args.sigma_t
    if getattr(args, "f_clock", None) is not None:
        jitter_changes["f_clock"] = args.f_clock
    try:
        cfg.jitter = dataclasses.replace(jm, **jitter_changes)
    except ValueError as exc:
        raise ConfigError(f"jitter: {exc}") from None
    if getattr(args, "n_realizations", None) is not None:
        cfg.n_realizations = args.n_realizations
    if getattr(args, "T", None) is not None:
        cfg.T = args.T
    if getattr(args, "param", None):
        cfg.sweep_params = (canonical_param(args.param),)
    cfg.anneal = dataclasses.replace(cfg.anneal, seed=cfg.seed)
    return cfg.validate()


def _state_rows(psi):
    labels = ("00", "01", "10", "11")
    return [(lab, float(z.real), float(z.imag), float(abs(z))) for lab, z in zip(labels, psi)]


def _state_dict(psi):
    return {"re": [float(z.real) for z in psi], "im": [float(z.imag) for z in psi],
            "abs": [float(abs(z)) for z in psi]}


def _solve(cfg):
    return noc.solve_noc(cfg.params, cfg.weights, grid_n=cfg.grid_n, tol=cfg.tol,
                         backend=cfg.backend)


def cmd_nominal(cfg, out):
    traj, psi, eps0 = dynamics.nominal_run(cfg.params, tol=cfg.tol, grid_n=cfg.grid_n,
                                           backend=cfg.backend)
    u = traj.final_unitary
    columns = {}
    for k, cbs in enumerate(("00", "01", "10", "11")):
        ov = np.array([np.vdot(BELL[b], u[:, k]) for b in BELL_LABELS])
        j = int(np.argmax(np.abs(ov)))
        columns[cbs] = {"bell": BELL_LABELS[j], "eps": float(1.0 - abs(ov[j]) ** 2),
                        "phase": float(np.angle(ov[j]))}
    write_csv(os.path.join(out, "final_state.csv"), ["basis", "re", "im", "abs"],
              _state_rows(psi))
    return {"eps0": eps0, "fidelity0": float(np.sqrt(1.0 - eps0)), "psi0f": _state_dict(psi),
            "columns": columns, "unitarity_drift": traj.stats.get("unitarity_drift"),
            "integrator": {k: traj.stats[k] for k in ("n_accepted", "n_rejected", "nfev")}}


def _noc_summary(sol):
    s_dev = float(np.max(np.abs(sol.s_of_tau - np.eye(sol.s_of_tau.shape[-1]))))
    return {"eps0": sol.eps0, "eps_noc": sol.eps_noc,
            "fidelity0": float(np.sqrt(1.0 - sol.eps0)),
            "fidelity_noc": float(np.sqrt(1.0 - sol.eps_noc)),
            "improvement": sol.eps0 / sol.eps_noc if sol.eps_noc > 0 else float("inf"),
            "target": {"labels": list(sol.target.labels),
                       "phases": [float(x) for x in sol.target.phases]},
            "psi_f": _state_dict(sol.psi_f),
            "riccati_max_dev_from_identity": s_dev,
            "delta_beta_max": float(np.max(np.abs(sol.delta_beta_mat))),
            "delta_f_peak": [float(x) for x in np.max(np.abs(sol.delta_f), axis=0)],
            "imag_residue": float(sol.imag_residue),
            "weights": sol.weights.describe()}


def cmd_noc(cfg, out):
    sol = _solve(cfg)
    write_csv(os.path.join(out, "delta_f.csv"), ["tau", "dF_x", "dF_y", "dF_z"],
              [(float(t), *map(float, f)) for t, f in zip(sol.grid, sol.delta_f)])
    write_csv(os.path.join(out, "final_state.csv"), ["basis", "re", "im", "abs"],
              _state_rows(sol.psi_f))
    return _noc_summary(sol)


def cmd_sweep(cfg, out):
    sol = _solve(cfg)
    tables = {}
    for name in cfg.sweep_params:
        spec = robustness.SweepSpec(name, offsets=cfg.sweep_offsets,
                                    reuse_delta_f=cfg.reuse_delta_f,
                                    rederive_target=cfg.rederive_target)
        rows = robustness.sensitivity_sweep(cfg.params, spec, sol, tol=cfg.tol,
                                            jobs=cfg.jobs, backend=cfg.backend)
        tables[name] = rows
        label = "lambda" if name == "lam" else name
        write_csv(os.path.join(out, f"sweep_{label}.csv"), [label, "eps", "offset"],
                  [(r["value"], r["eps"], r["offset"]) for r in rows])
    result = {"eps_noc": sol.eps_noc, "tables": tables}
    if len(tables) > 1:
        result["most_sensitive"] = robustness.most_sensitive(tables)
    return result


def cmd_jitter(cfg, out):
    sol = _solve(cfg)
    ens = robustness.jitter_ensemble(cfg.params, sol, cfg.jitter, cfg.n_realizations,
                                     tol=cfg.tol, jobs=cfg.jobs, backend=cfg.backend)
    write_csv(os.path.join(out, "jitter.csv"), ["realization", "master_seed", "eps"],
              [(i, cfg.jitter.seed, e) for i, e in enumerate(ens.eps)])
    return {"eps_noc": sol.eps_noc, "model": cfg.jitter.to_dict(), "mean": ens.mean,
            "std": ens.std, "eps": ens.eps, "seeds": ens.seeds}


def cmd_anneal(cfg, out):
    results = search.anneal_chains(cfg.anneal_start, cfg.anneal, cfg.anneal_seeds,
                                   jobs=cfg.jobs)
    chains = []
    for r in results:
        write_csv(os.path.join(out, f"anneal_seed{r.seed}.csv"),
                  ["eval", "eps", "temperature", "accepted"],
                  [(i, e, t, int(a)) for i, e, t, a in r.history])
        chains.append({"seed": r.seed, "best_eps": r.best_eps, "start_eps": r.start_eps,
                       "n_evals": r.n_evals, "n_failures": r.n_failures,
                       "best_params": r.best_params.to_dict()})
    best = results[0]
    with open(os.path.join(out, "best_params.toml"), "w") as fh:
        fh.write(params_toml(best.best_params))
    return {"best_eps": best.best_eps, "best_seed": best.seed,
            "best_params": best.best_params.to_dict(), "chains": chains,
            "anneal": cfg.anneal.to_dict()}


def cmd_bandwidth(cfg, out):
    sol = _solve(cfg)
    spec = robustness.bandwidth(sol.delta_f, sol.grid, cfg.threshold)
    for j, axis in enumerate("xyz"):
        write_csv(os.path.join(out, f"spectrum_{axis}.csv"), ["omega", "magnitude"],
                  [(float(w), float(m)) for w, m in zip(spec.omega, spec.magnitude[:, j])])
    cut = {axis: float(spec.cutoff[j]) for j, axis in enumerate("xyz")}
    return {"threshold": cfg.threshold, "cutoff": cut,
            "peak_omega": {axis: float(spec.peak_omega[j]) for j, axis in enumerate("xyz")},
            "T": cfg.T,
            "cutoff_per_second": {k: robustness.dimensionful_bandwidth(v, cfg.params, cfg.T)
                                  for k, v in cut.items()},
            "eps_noc": sol.eps_noc}


UNITS = {"T": "s", "a": "1/s^2", "b1": "1/s", "b2": "1/s", "B": "1/s^5", "Delta": "1/s",
         "delta_omega": "1/s", "J_z": "1/s", "J_xy": "1/s"}


def cmd_units(cfg, out):
    q = robustness.to_dimensionful(cfg.params, cfg.T)
    values = dataclasses.asdict(q)
    write_csv(os.path.join(out, "units.csv"), ["name", "value", "unit"],
              [(k, float(v), UNITS[k]) for k, v in values.items()])
    return {"dimensionful": values, "units": UNITS, "time_scale": q.time_scale,
            "convention": "hbar = 1; energies given as angular frequencies"}


COMMANDS = {"nominal": cmd_nominal, "noc": cmd_noc, "sweep": cmd_sweep, "jitter": cmd_jitter,
            "anneal": cmd_anneal, "bandwidth": cmd_bandwidth, "units": cmd_units}


def run(argv=None):
    """Parse ``argv``, run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            cfg = resolve_config(args)
        out = ensure_dir(cfg.out)
    except ConfigError as exc:
        print(f"nocprep: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID

    start = time.perf_counter()
    try:
        result = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"nocprep: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NUMERICAL_ERRORS as exc:
        print(f"nocprep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    report = {"command": args.command, "version": __version__,
              "backend": cfg.backend or kernel.BACKEND,
              "wall_time_s": time.perf_counter() - start,
              "config": cfg.to_dict(), "result": result}
    path = write_report(report, out)
    log.info("wrote %s", path)
    print(path)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
