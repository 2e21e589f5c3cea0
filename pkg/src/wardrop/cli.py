"""Command-line interface: ``wardrop <subcommand> CONFIG [options]``.

CONFIG is a JSON file or ``builtin:<name>``. Exit codes: 0 ok, 1 usage,
2 invalid configuration, 3 runtime failure, 4 a verdict did not pass.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dynamics import integrate_ode, simulate_exponential_learning, simulate_sde
from .equilibria import DEFAULT_TOL, solve_social_optimum, solve_wardrop, verify_worst_delay_equilibrium
from .errors import ConfigError, NetworkError, WardropError
from .experiments import (PASS, check_adjoint_lemmas, estimate_hitting_time,
                          estimate_invariant_measure, slow_learning_check, stability_probability)
from .io import BUILTINS, builtin_example, dump_json, manifest, parse_config, write_trajectory
from .network import redundancy_lower_bound

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERDICT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _globals(suppress):
    # subcommands repeat the global flags; SUPPRESS keeps them from resetting values given earlier
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = _Parser(add_help=False)
    g.add_argument("--seed", type=int, help="master seed (overrides the config)", **kw)
    g.add_argument("--out", help="output file (CSV for simulations, JSON otherwise)", **kw)
    g.add_argument("--tol", type=float, help="relative Wardrop gap tolerance",
                   **(kw or {"default": DEFAULT_TOL}))
    g.add_argument("--quiet", action="store_true", help="suppress the summary on stderr", **kw)
    return g


def build_parser():
    common = _globals(suppress=True)
    p = _Parser(prog="wardrop", description=__doc__.splitlines()[0], parents=[_globals(suppress=False)])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_, config=True):
        sp = sub.add_parser(name, help=help_, parents=[common])
        if config:
            sp.add_argument("config", help="JSON config path or builtin:<name>")
        return sp

    def sim_opts(sp, horizon=True):
        sp.add_argument("--rates", type=_floats, help="learning rate(s), one value or one per user")
        sp.add_argument("--dt", type=float)
        if horizon:
            sp.add_argument("--horizon", type=float)
        sp.add_argument("--x0", type=_floats, help="initial flow (default: equal split)")
        sp.add_argument("--sigma", type=float, help="uniform noise intensity on every edge")

    sp = cmd("analyze", "redundancy, equilibrium and its classification")
    sp.add_argument("--social", action="store_true", help="also compute the social optimum")
    sp.add_argument("--worst-delay", action="store_true", help="also run the brute-force worst-delay check")

    sp = cmd("simulate-ode", "deterministic replicator or BNN trajectory")
    sim_opts(sp)
    sp.add_argument("--rhs", choices=("replicator", "bnn"), default="replicator")
    sp.add_argument("--scheme", choices=("rk4", "euler"))
    sp.add_argument("--stride", type=int)
    for name, help_ in (("simulate-sde", "stochastic replicator trajectory"),
                        ("simulate-exp", "stochastic exponential-learning trajectory")):
        sp = cmd(name, help_)
        sim_opts(sp)
        sp.add_argument("--stride", type=int)
        sp.add_argument("--replicates", type=int, help="batch of independent copies")

    sp = cmd("hitting-time", "mean time to reach an L1 ball around a strict equilibrium")
    sim_opts(sp, horizon=False)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--replicates", type=int, default=500)
    sp.add_argument("--t-max", type=float)
    sp.add_argument("--dynamics", choices=("replicator", "exponential"), default="replicator")

    sp = cmd("stability", "fraction of runs staying near a strict equilibrium")
    sim_opts(sp, horizon=False)
    sp.add_argument("--radius", type=float, required=True)
    sp.add_argument("--radius-grid", type=_floats)
    sp.add_argument("--replicates", type=int, default=200)
    sp.add_argument("--T", type=float, default=200.0)
    sp.add_argument("--level", type=float, default=0.95)

    sp = cmd("invariant-measure", "long-run occupancy of projective balls around an interior equilibrium")
    sim_opts(sp, horizon=False)
    sp.add_argument("--T", type=float, default=2000.0)
    sp.add_argument("--burn-in", type=float, default=100.0)
    sp.add_argument("--theta-grid", type=_floats, default=[0.25, 0.5, 0.75, 1.0])
    sp.add_argument("--ratio", type=float,
                    help="set the learning rate so that m rho kappa^2/(lambda sigma^2) equals this value")

    sp = cmd("check-lemmas", "sampled lower bounds on the adjoint potential")
    sp.add_argument("--samples", type=int, default=10_000)

    sp = cmd("example", "print a builtin config", config=False)
    sp.add_argument("name", choices=BUILTINS)
    return p


# ---------------------------------------------------------------------------


def _setup(args):
    cfg = parse_config(args.config)
    sim = cfg.sim
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for name in ("dt", "horizon", "scheme", "stride"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    rates = getattr(args, "rates", None)
    if rates is not None:
        changes["rates"] = rates[0] if len(rates) == 1 else np.array(rates)
    if changes:
        sim = replace(sim, **changes)
    noise = cfg.noise
    if getattr(args, "sigma", None) is not None:
        noise = type(noise)(np.full(cfg.network.n_edges, args.sigma))
    return cfg, sim, noise


def _x0(net, args):
    if getattr(args, "x0", None) is None:
        return net.barycenter()
    x0 = np.array(args.x0, dtype=float)
    if x0.shape != (net.n_paths,):
        raise UsageError(f"--x0 needs {net.n_paths} values ({', '.join(net.path_names)})")
    return x0


def _emit(args, doc):
    text = dump_json(doc)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def _say(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def _equilibrium(net, tol):
    rep = solve_wardrop(net, tol=tol)
    if not rep.converged:
        raise WardropError(f"solver stopped at relative gap {rep.gap:.3g} without reaching {tol:g}")
    return rep


def cmd_analyze(args, started):
    cfg, _, _ = _setup(args)
    net = cfg.network
    info = net.redundancy_info
    rep = solve_wardrop(net, tol=args.tol)
    doc = {
        "network": {"name": cfg.name, "nodes": len(net.nodes), "edges": net.n_edges,
                    "users": net.n_users, "paths": net.path_names,
                    "background_users": [u.id for u in net.background_users]},
        "redundancy": {"red": info.redundancy, "rank": info.rank, "lower_bound": redundancy_lower_bound(net),
                       "kernel": info.kernel.T.tolist()},
        "equilibrium": rep.to_dict(net),
        "manifest": manifest("analyze", cfg.digest, None, started),
    }
    if args.social:
        so = solve_social_optimum(net, tol=args.tol)
        doc["social_optimum"] = so.to_dict(net)
    if args.worst_delay:
        ne2 = verify_worst_delay_equilibrium(net, rep.flow)
        doc["worst_delay_check"] = {"passed": ne2.passed, "improvements": ne2.improvements,
                                    "probes": ne2.probes, "skipped": ne2.skipped}
    _emit(args, doc)
    _say(args, f"red={info.redundancy} classification={rep.classification} gap={rep.gap:.3g} "
               f"flow={np.round(rep.flow, 6).tolist()}")
    return EXIT_OK if rep.converged else EXIT_RUNTIME


def cmd_simulate(args, started):
    cfg, sim, noise = _setup(args)
    net = cfg.network
    q = _equilibrium(net, args.tol).flow
    sim = replace(sim, q=q)
    x0 = _x0(net, args)
    if args.command == "simulate-ode":
        traj = integrate_ode(net, x0, sim, rhs=args.rhs)
    elif args.command == "simulate-sde":
        traj = simulate_sde(net, x0, replace(sim, scheme="euler-maruyama"), noise, args.replicates)
    else:
        traj = simulate_exponential_learning(net, x0, replace(sim, scheme="euler-maruyama"), noise,
                                             args.replicates)
    out = args.out or "trajectory.csv"
    write_trajectory(traj, out, net, manifest(args.command, cfg.digest, sim.seed, started))
    _say(args, f"wrote {out} ({len(traj.times)} samples, status {traj.status})")
    if not traj.completed:
        _say(args, traj.message)
        return EXIT_RUNTIME
    return EXIT_OK


def _report(args, cfg, seed, started, report):
    doc = report.to_dict()
    doc["manifest"] = manifest(args.command, cfg.digest, seed, started)
    _emit(args, doc)
    for v in report.verdicts:
        _say(args, f"{v.outcome}: {v.name} (empirical {v.empirical:.6g}, bound {v.bound:.6g})")
    return EXIT_OK if report.outcome == PASS else EXIT_VERDICT


def cmd_hitting(args, started):
    cfg, sim, noise = _setup(args)
    net = cfg.network
    q = _equilibrium(net, args.tol).flow
    rep = estimate_hitting_time(net, q, args.delta, _x0(net, args), sim, noise, args.replicates,
                                t_max=args.t_max, dynamics=args.dynamics)
    return _report(args, cfg, sim.seed, started, rep)


def cmd_stability(args, started):
    cfg, sim, noise = _setup(args)
    net = cfg.network
    q = _equilibrium(net, args.tol).flow
    rep = stability_probability(net, q, args.radius, sim, noise, args.replicates, T=args.T,
                                level=args.level, radius_grid=args.radius_grid)
    return _report(args, cfg, sim.seed, started, rep)


def cmd_invariant(args, started):
    cfg, sim, noise = _setup(args)
    net = cfg.network
    q = _equilibrium(net, args.tol).flow
    if args.ratio is not None:
        probe = slow_learning_check(net, q, sim.rates, noise).statistics
        lam = probe["m"] * probe["rho"] * probe["kappa"] ** 2 / (args.ratio * probe["sigma2"])
        sim = replace(sim, rates=lam)
    x0 = None if args.x0 is None else _x0(net, args)
    rep = estimate_invariant_measure(net, q, sim, noise, args.T, args.burn_in, args.theta_grid, x0=x0)
    return _report(args, cfg, sim.seed, started, rep)


def cmd_lemmas(args, started):
    cfg, sim, _ = _setup(args)
    net = cfg.network
    q = _equilibrium(net, args.tol).flow
    rep = check_adjoint_lemmas(net, q, args.samples, seed=sim.seed)
    return _report(args, cfg, sim.seed, started, rep)


def cmd_example(args, started):
    _emit(args, builtin_example(args.name))
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze, "simulate-ode": cmd_simulate, "simulate-sde": cmd_simulate,
    "simulate-exp": cmd_simulate, "hitting-time": cmd_hitting, "stability": cmd_stability,
    "invariant-measure": cmd_invariant, "check-lemmas": cmd_lemmas, "example": cmd_example,
}


def _fail(code, kind, message):
    print(dump_json({"error": kind, "exit_code": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None):
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, started)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except NetworkError as exc:
        return _fail(EXIT_CONFIG, "network", str(exc))
    except (WardropError, ValueError, FloatingPointError, OSError) as exc:
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
