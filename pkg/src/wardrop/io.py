"""JSON configs, builtin examples, trajectory CSV output and run manifests."""
from __future__ import annotations

import copy
import hashlib
import json
import platform
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .dynamics import DIAGNOSTICS, GENERATOR_ID, SimConfig, Trajectory
from .errors import ConfigError, NetworkError
from .latency import LatencySpec, NoiseSpec
from .network import Edge, Network, UserSpec, build_network

BUILTINS = ("braess", "fig1a", "fig1b", "parallel2", "pigou")


def _data(name):
    return resources.files("wardrop").joinpath("data", name).read_text()


def config_schema():
    return json.loads(_data("config.schema.json"))


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        _VALIDATOR = Draft202012Validator(config_schema())
    return _VALIDATOR


def builtin_example(name):
    """The canonical config dict of a builtin example."""
    if name not in BUILTINS:
        raise ConfigError([("", f"unknown example {name!r}; available: {', '.join(BUILTINS)}")])
    return json.loads(_data(f"{name}.json"))


@dataclass
class ParsedConfig:
    network: Network
    sim: SimConfig
    noise: NoiseSpec
    raw: dict
    name: str
    digest: str


def config_digest(raw):
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()


def _latency(d):
    kind = d["type"]
    if kind == "affine":
        return LatencySpec.affine(d["a"], d.get("b", 0.0))
    if kind == "constant":
        return LatencySpec.constant(d["c"])
    if kind == "monomial":
        return LatencySpec.monomial(d["coefficient"], d["exponent"], d.get("b", 0.0))
    return LatencySpec.mm1(d["mu"])


def _field(path):
    return "/".join(str(p) for p in path)


def load_config_source(source):
    """Raw config dict from a file path or ``builtin:<name>``."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    source = str(source)
    if source.startswith("builtin:"):
        return builtin_example(source.split(":", 1)[1])
    try:
        text = Path(source).read_text()
    except OSError as exc:
        raise ConfigError([("", f"cannot read {source}: {exc.strerror or exc}")]) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")]) from exc


def parse_config(source) -> ParsedConfig:
    """Validate a config (path, ``builtin:<name>`` or dict) and build its objects.

    Schema problems and cross-reference problems are collected and raised
    together as one ConfigError; graph-level problems come from build_network.
    """
    raw = load_config_source(source)
    problems = [(_field(e.absolute_path), e.message)
                for e in sorted(_validator().iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))]
    if problems:
        raise ConfigError(problems)

    edge_ids = {e["id"] for e in raw["edges"]}
    user_ids = [u["id"] for u in raw["users"]]
    noise_raw = raw.get("noise", {})
    for name in noise_raw.get("sigma", {}):
        if name not in edge_ids:
            problems.append((f"noise/sigma/{name}", "unknown edge"))
    sim_raw = raw.get("simulation", {})
    rates_raw = sim_raw.get("rates", 1.0)
    if isinstance(rates_raw, dict):
        for uid in rates_raw:
            if uid not in user_ids:
                problems.append((f"simulation/rates/{uid}", "unknown user"))
    if problems:
        raise ConfigError(problems)

    try:
        edges = [Edge(e["id"], e["from"], e["to"], _latency(e["latency"])) for e in raw["edges"]]
        users = []
        for u in raw["users"]:
            paths = u["paths"] if u["paths"] == "all" else {p["label"]: p["edges"] for p in u["paths"]}
            users.append(UserSpec(u["id"], u["origin"], u["destination"], float(u["rate"]), paths,
                                  u.get("path_cap", 64)))
        net = build_network(raw["nodes"], edges, users)
    except NetworkError as exc:
        raise ConfigError([("", str(exc))]) from exc

    noise = NoiseSpec.from_mapping(net, noise_raw.get("sigma", {}), noise_raw.get("default", 0.0))
    if isinstance(rates_raw, dict):
        rates = np.array([float(rates_raw.get(u.id, 1.0)) for u in net.users])
    else:
        rates = float(rates_raw)
    sim = SimConfig(rates=rates, dt=sim_raw.get("dt", 1e-2), horizon=sim_raw.get("horizon", 10.0),
                    scheme=sim_raw.get("scheme", "rk4"), seed=sim_raw.get("seed", 0),
                    floor=sim_raw.get("floor", 1e-12), stride=sim_raw.get("stride", 1))
    return ParsedConfig(net, sim, noise, raw, raw.get("name", ""), config_digest(raw))


def network_config(net: Network, noise: NoiseSpec | None = None, sim: SimConfig | None = None, name=""):
    """Config dict describing ``net``; parsing it rebuilds an equal network.

    Users folded into background load are written with their single path.
    """
    cfg = {
        "version": 1,
        "nodes": list(net.nodes),
        "edges": [{"id": e.id, "from": e.tail, "to": e.head, "latency": e.latency.to_dict()} for e in net.edges],
        "users": [
            {"id": u.id, "origin": u.origin, "destination": u.destination, "rate": u.rate,
             "paths": [{"label": lab, "edges": list(p)} for lab, p in zip(u.labels, u.paths)]}
            for u in net.users + net.background_users
        ],
    }
    if name:
        cfg["name"] = name
    if noise is not None:
        cfg["noise"] = {"default": 0.0, "sigma": {e.id: float(s) for e, s in zip(net.edges, noise.sigma)}}
    if sim is not None:
        rates = sim.user_rates(net)
        cfg["simulation"] = {
            "rates": {u.id: float(r) for u, r in zip(net.users, rates)},
            "dt": sim.dt, "horizon": sim.horizon, "scheme": sim.scheme, "seed": int(sim.seed),
            "floor": sim.floor, "stride": int(sim.stride),
        }
    return cfg


def write_config(path, net: Network, noise=None, sim=None, name=""):
    Path(path).write_text(json.dumps(network_config(net, noise, sim, name), indent=2) + "\n")


# ---------------------------------------------------------------------------
# outputs


def manifest(command, config_digest_=None, seed=None, started=None, extra=None):
    now = time.time()
    out = {
        "command": command,
        "config_digest": config_digest_,
        "seed": seed,
        "generator": GENERATOR_ID,
        "version": __version__,
        "started": _iso(started if started is not None else now),
        "finished": _iso(now),
        "wall_seconds": None if started is None else round(now - started, 6),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        out.update(extra)
    return out


def _iso(ts):
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(ts))


def _fmt(v):
    return "%.17g" % float(v)


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def write_trajectory(traj: Trajectory, path, net: Network, manifest_=None):
    """CSV with columns t, u<user>.<label> per path, then H_q, phi, L_q, theta, gap.

    Batched trajectories get a ``replicate`` column after ``t``. A manifest,
    when given, goes to the sidecar ``<stem>.manifest.json``.
    """
    path = Path(path)
    batched = traj.flows.ndim == 3
    header = ["t"] + (["replicate"] if batched else []) + net.path_names + list(DIAGNOSTICS)
    lines = [",".join(header)]
    for s, t in enumerate(traj.times):
        if batched:
            for b in range(traj.flows.shape[1]):
                row = [_fmt(t), str(b)] + [_fmt(v) for v in traj.flows[s, b]]
                row += [_fmt(traj.diagnostics[k][s, b]) for k in DIAGNOSTICS]
                lines.append(",".join(row))
        else:
            row = [_fmt(t)] + [_fmt(v) for v in traj.flows[s]]
            row += [_fmt(traj.diagnostics[k][s]) for k in DIAGNOSTICS]
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    if manifest_ is not None:
        doc = dict(manifest_)
        doc["trajectory"] = {k: v for k, v in traj.metadata.items()}
        doc["status"] = traj.status
        if traj.message:
            doc["message"] = traj.message
        manifest_path(path).write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")
    return path


def read_trajectory_csv(path):
    """Header list and float matrix of a trajectory CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def dump_json(doc):
    return json.dumps(doc, indent=2, default=_json_default, allow_nan=True)
