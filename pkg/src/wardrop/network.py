"""Networks of users routing traffic over paths, and their flow geometry.

A flow is a flat array over all paths; the paths of user ``i`` occupy the
contiguous block ``net.user_slices[i]`` and index 0 of each block is the
user's base path.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NetworkError, NotInteriorError
from .latency import EdgeCosts, LatencySpec

# singular values below RANK_RTOL * s_max count as zero
RANK_RTOL = 1e-10
DEFAULT_PATH_CAP = 64


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    latency: LatencySpec


@dataclass(frozen=True)
class User:
    id: str
    origin: str
    destination: str
    rate: float
    paths: tuple          # tuple of edge-id tuples
    labels: tuple         # one label per path


@dataclass(frozen=True)
class UserSpec:
    """Input description of a user; ``paths`` maps label -> edge ids, or is a list
    of edge-id lists (labels ``p0, p1, ...``), or the string ``"all"``."""

    id: str
    origin: str
    destination: str
    rate: float
    paths: object = "all"
    path_cap: int = DEFAULT_PATH_CAP


@dataclass(frozen=True)
class RedundancyInfo:
    Q: np.ndarray            # edges x sum_i(|A_i|-1), columns P[:, mu] - P[:, base]
    rank: int
    redundancy: int
    kernel: np.ndarray       # n_paths x redundancy, orthonormal, in path coordinates
    kernel_z: np.ndarray     # sum_i(|A_i|-1) x redundancy, in the (e_mu - e_0) basis
    singular_values: np.ndarray = field(repr=False)


class Network:
    """Immutable congestion network: graph, latencies, users and their paths.

    Build it with :func:`build_network`; the constructor assumes validated input.
    """

    def __init__(self, nodes, edges, users, background_users=()):
        self.nodes = tuple(nodes)
        self.edges = tuple(edges)
        self.users = tuple(users)
        self.background_users = tuple(background_users)

        self.edge_index = {e.id: r for r, e in enumerate(self.edges)}
        self.costs = EdgeCosts([e.latency for e in self.edges], [e.id for e in self.edges])

        sizes = [len(u.paths) for u in self.users]
        starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.user_slices = tuple(slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:]))
        self.base_paths = starts[:-1].copy()
        self.n_paths = int(starts[-1])

        P = np.zeros((self.n_edges, self.n_paths))
        owner = np.zeros(self.n_paths, dtype=int)
        for i, (u, s) in enumerate(zip(self.users, self.user_slices)):
            owner[s] = i
            for j, path in enumerate(u.paths):
                for e in path:
                    P[self.edge_index[e], s.start + j] = 1.0
        M = np.zeros((self.n_users, self.n_paths))
        M[owner, np.arange(self.n_paths)] = 1.0
        bg = np.zeros(self.n_edges)
        for u in self.background_users:
            for e in u.paths[0]:
                bg[self.edge_index[e]] += u.rate
        self.P = P
        self.owner = owner
        self.M = M
        self.background = bg
        self.rates = np.array([u.rate for u in self.users], dtype=float)
        for arr in (self.P, self.owner, self.M, self.background, self.rates, self.base_paths):
            arr.setflags(write=False)
        self.redundancy_info = _redundancy(self)

    # -- sizes and labels ----------------------------------------------------
    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_users(self):
        return len(self.users)

    @property
    def total_rate(self):
        return float(self.rates.sum())

    @property
    def path_rates(self):
        """rho_i broadcast to every path of user i."""
        return self.rates[self.owner]

    @property
    def path_names(self):
        return [f"u{u.id}.{lab}" for u in self.users for lab in u.labels]

    def used_edges(self):
        """Indices of edges lying on at least one path."""
        return np.flatnonzero(self.P.sum(axis=1) > 0)

    def path_index(self, user_id, label):
        for u, s in zip(self.users, self.user_slices):
            if u.id == str(user_id):
                return s.start + u.labels.index(label)
        raise KeyError(user_id)

    # -- flows ---------------------------------------------------------------
    def loads(self, x):
        """Total edge loads y = P x + background (vectorised over leading axes)."""
        return np.asarray(x, dtype=float) @ self.P.T + self.background

    def user_loads(self, x):
        """Per-user edge loads y_ir, shape (..., n_users, n_edges)."""
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., s] @ self.P[:, s].T for s in self.user_slices], axis=-2)

    def user_sums(self, x):
        return np.asarray(x, dtype=float) @ self.M.T

    def flow(self, per_user):
        """Flat flow from a list of per-user vectors."""
        parts = [np.asarray(p, dtype=float) for p in per_user]
        if [len(p) for p in parts] != [s.stop - s.start for s in self.user_slices]:
            raise ValueError("per-user flow sizes do not match the network's path sets")
        return np.concatenate(parts) if parts else np.zeros(0)

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return [x[..., s] for s in self.user_slices]

    def barycenter(self):
        return self.path_rates / np.bincount(self.owner)[self.owner]

    def vertex(self, choice):
        """Pure flow sending each user's whole rate along ``choice[i]`` (local index)."""
        x = np.zeros(self.n_paths)
        for i, s in enumerate(self.user_slices):
            x[s.start + int(choice[i])] = self.rates[i]
        return x

    def validate_flow(self, x, atol=1e-9):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_paths:
            raise ValueError(f"flow has {x.shape[-1]} coordinates, network has {self.n_paths} paths")
        if np.any(x < 0):
            raise ValueError("flow has negative coordinates")
        err = np.abs(self.user_sums(x) - self.rates)
        if np.any(err > atol):
            raise ValueError(f"per-user mass off by up to {err.max():.3g}")
        return x

    def random_flow(self, rng, batch=None, alpha=1.0):
        """Dirichlet-distributed flows (interior with probability one)."""
        shape = () if batch is None else (batch,)
        parts = [self.rates[i] * rng.dirichlet(np.full(s.stop - s.start, alpha), size=shape or None)
                 for i, s in enumerate(self.user_slices)]
        return np.concatenate(parts, axis=-1)

    # -- structural equality ---------------------------------------------------
    def _key(self):
        return (self.nodes, self.edges, self.users, self.background_users)

    def __eq__(self, other):
        return isinstance(other, Network) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return (f"Network({len(self.nodes)} nodes, {self.n_edges} edges, {self.n_users} users, "
                f"{self.n_paths} paths, red={self.redundancy_info.redundancy})")


# ---------------------------------------------------------------------------
# construction


def enumerate_paths(edges: Sequence[Edge], origin, destination, cap=DEFAULT_PATH_CAP):
    """All simple paths origin -> destination, as edge-id tuples in lexicographic order.

    Raises NetworkError when more than ``cap`` paths exist.
    """
    out_edges = {}
    for e in sorted(edges, key=lambda e: e.id):
        out_edges.setdefault(e.tail, []).append(e)
    found = []

    def dfs(node, visited, path):
        if node == destination:
            found.append(tuple(path))
            if len(found) > cap:
                raise NetworkError(f"more than {cap} simple paths from {origin} to {destination}")
            return
        for e in out_edges.get(node, ()):
            if e.head not in visited:
                visited.add(e.head)
                path.append(e.id)
                dfs(e.head, visited, path)
                path.pop()
                visited.discard(e.head)

    dfs(origin, {origin}, [])
    return sorted(found)


def _normalise_paths(spec: UserSpec, edges):
    if isinstance(spec.paths, str):
        if spec.paths != "all":
            raise NetworkError(f"user {spec.id}: paths must be a list, a mapping or 'all'")
        found = enumerate_paths(edges, spec.origin, spec.destination, spec.path_cap)
        return [(f"p{j}", p) for j, p in enumerate(found)]
    if isinstance(spec.paths, Mapping):
        return [(str(k), tuple(v)) for k, v in spec.paths.items()]
    return [(f"p{j}", tuple(p)) for j, p in enumerate(spec.paths)]


def _check_path(uid, label, path, origin, destination, by_id):
    if not path:
        raise NetworkError(f"user {uid}: path {label!r} is empty")
    if len(set(path)) != len(path):
        raise NetworkError(f"user {uid}: path {label!r} repeats an edge")
    node = origin
    for e in path:
        if e not in by_id:
            raise NetworkError(f"user {uid}: path {label!r} uses unknown edge {e!r}")
        if by_id[e].tail != node:
            raise NetworkError(f"user {uid}: path {label!r} is not a walk (edge {e!r} leaves "
                               f"{by_id[e].tail}, expected {node})")
        node = by_id[e].head
    if node != destination:
        raise NetworkError(f"user {uid}: path {label!r} ends at {node}, not {destination}")


def build_network(nodes, edges, users) -> Network:
    """Validate a network description and derive its matrices.

    ``edges`` holds :class:`Edge` objects or ``(id, tail, head, LatencySpec)``
    tuples; ``users`` holds :class:`UserSpec` objects. Users sharing an
    origin-destination pair are merged (rates summed, path sets united) with a
    warning; users left with a single path become constant background load.
    """
    nodes = tuple(str(n) for n in nodes)
    if len(set(nodes)) != len(nodes):
        raise NetworkError("duplicate node id")
    node_set = set(nodes)
    edge_objs = []
    for e in edges:
        if not isinstance(e, Edge):
            e = Edge(str(e[0]), str(e[1]), str(e[2]), e[3])
        if e.tail not in node_set or e.head not in node_set:
            raise NetworkError(f"edge {e.id!r} references unknown node")
        if e.tail == e.head:
            raise NetworkError(f"edge {e.id!r} is a self-loop")
        edge_objs.append(e)
    by_id = {}
    for e in edge_objs:
        if e.id in by_id:
            raise NetworkError(f"duplicate edge id {e.id!r}")
        by_id[e.id] = e

    merged = {}   # (origin, destination) -> [id, rate, [(label, path)]]
    order = []
    for spec in users:
        uid = str(spec.id)
        if spec.origin not in node_set or spec.destination not in node_set:
            raise NetworkError(f"user {uid}: unknown origin or destination")
        if not spec.rate > 0:
            raise NetworkError(f"user {uid}: rate must be positive, got {spec.rate}")
        paths = _normalise_paths(spec, edge_objs)
        if not paths:
            raise NetworkError(f"user {uid}: no path from {spec.origin} to {spec.destination}")
        for label, p in paths:
            _check_path(uid, label, p, spec.origin, spec.destination, by_id)
        if len({lab for lab, _ in paths}) != len(paths):
            raise NetworkError(f"user {uid}: duplicate path label")
        if len({p for _, p in paths}) != len(paths):
            raise NetworkError(f"user {uid}: duplicate path")
        key = (spec.origin, spec.destination)
        if key in merged:
            entry = merged[key]
            warnings.warn(f"users {entry[0]} and {uid} share OD pair {key}; merging them", stacklevel=2)
            entry[1] += float(spec.rate)
            known = {p for _, p in entry[2]}
            labels = {lab for lab, _ in entry[2]}
            for label, p in paths:
                if p in known:
                    continue
                if label in labels:
                    label = f"{label}_{uid}"
                entry[2].append((label, p))
                labels.add(label)
        else:
            merged[key] = [uid, float(spec.rate), list(paths)]
            order.append(key)

    ids = [merged[k][0] for k in order]
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate user id")
    routed, background = [], []
    for key in order:
        uid, rate, paths = merged[key]
        user = User(uid, key[0], key[1], rate, tuple(p for _, p in paths), tuple(l for l, _ in paths))
        (routed if len(paths) >= 2 else background).append(user)
    return Network(nodes, edge_objs, routed, background)


# ---------------------------------------------------------------------------
# redundancy


def _redundancy(net) -> RedundancyInfo:
    cols, basis = [], []
    for s in net.user_slices:
        for j in range(s.start + 1, s.stop):
            cols.append(net.P[:, j] - net.P[:, s.start])
            b = np.zeros(net.n_paths)
            b[j], b[s.start] = 1.0, -1.0
            basis.append(b)
    dim_z = len(cols)
    Q = np.array(cols).T if cols else np.zeros((net.n_edges, 0))
    B = np.array(basis).T if basis else np.zeros((net.n_paths, 0))
    if dim_z == 0 or net.n_edges == 0:
        sv = np.zeros(0)
        rank = 0
        kz = np.eye(dim_z)
    else:
        _, sv, vh = np.linalg.svd(Q, full_matrices=True)
        rank = int(np.sum(sv > RANK_RTOL * sv[0])) if sv.size and sv[0] > 0 else 0
        kz = vh[rank:].T
    red = dim_z - rank
    kernel = np.linalg.qr(B @ kz)[0] if red else np.zeros((net.n_paths, 0))
    for arr in (Q, kernel, kz, sv):
        arr.setflags(write=False)
    return RedundancyInfo(Q, rank, red, kernel, kz, sv)


def redundancy(net: Network) -> RedundancyInfo:
    """Redundancy matrix, its rank and kernel; red = sum_i(|A_i|-1) - rank."""
    return net.redundancy_info


def redundancy_lower_bound(net: Network) -> int:
    """|users| - |edges used by some path|; never exceeds the redundancy."""
    return net.n_users - len(net.used_edges())


# ---------------------------------------------------------------------------
# projective geometry around an interior point


def _require_interior(q):
    q = np.asarray(q, dtype=float)
    if q.size == 0 or np.any(q <= 0):
        raise NotInteriorError("reference flow must be strictly interior")
    return q


def projective_distance(q, x):
    """Scale theta in [0, 1] with x = q + theta z, q + z on the boundary."""
    q = _require_interior(q)
    x = np.asarray(x, dtype=float)
    return np.clip(np.max(1.0 - x / q, axis=-1), 0.0, 1.0)


def boundary_point(q, x):
    """The boundary point q + z on the ray from q through x (x != q)."""
    q = _require_interior(q)
    theta = projective_distance(q, x)
    if np.any(theta == 0):
        raise ValueError("x coincides with q; no ray")
    return q + (np.asarray(x, dtype=float) - q) / np.expand_dims(theta, -1)


def project_simplex(v, mass):
    """Euclidean projection of ``v`` (last axis) onto {w >= 0, sum w = mass}."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - np.expand_dims(mass, -1)
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    k = np.maximum(cond.sum(axis=-1), 1)
    theta = np.take_along_axis(css, np.expand_dims(k - 1, -1), axis=-1) / np.expand_dims(k, -1)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class EssenceResult:
    kappa: float
    facet: int                 # path index whose coordinate vanishes at the minimiser
    boundary_flow: np.ndarray  # q + z at the minimiser
    facet_values: np.ndarray   # min ||P z|| per facet


def essence(net: Network, q, restarts=5, seed=0, tol=1e-10, max_iter=50_000) -> EssenceResult:
    """Minimal normalised load displacement rho^-1 min ||P z|| over boundary directions.

    Each facet {x_f = 0} of the flow polytope is a convex quadratic problem in
    x = q + z; it is solved by projected gradient from ``restarts`` random
    starting points (run as one batch) and the global minimum is reported.
    """
    q = _require_interior(q)
    info = net.redundancy_info
    if info.redundancy > 0:
        # a load-invisible direction reaches the boundary with zero displacement
        k = info.kernel[:, 0]
        k = k if k.min() < 0 else -k
        neg = k < 0
        steps = np.where(neg, q / np.where(neg, -k, 1.0), np.inf)
        f = int(np.argmin(steps))
        x = q + steps[f] * k
        x[f] = 0.0
        return EssenceResult(0.0, f, np.maximum(x, 0.0), np.zeros(net.n_paths))
    rng = np.random.default_rng(seed)
    P = net.P
    L = 2.0 * max(np.linalg.norm(P, 2) ** 2, 1e-300)
    step = 1.0 / L
    yq = P @ q
    values = np.full(net.n_paths, np.inf)
    points = np.zeros((net.n_paths, net.n_paths))

    def project(x, f):
        out = np.empty_like(x)
        for i, s in enumerate(net.user_slices):
            if s.start <= f < s.stop:
                keep = np.ones(s.stop - s.start, dtype=bool)
                keep[f - s.start] = False
                block = np.zeros_like(x[:, s])
                block[:, keep] = project_simplex(x[:, s][:, keep], np.full(len(x), net.rates[i]))
                out[:, s] = block
            else:
                out[:, s] = project_simplex(x[:, s], np.full(len(x), net.rates[i]))
        return out

    for f in range(net.n_paths):
        x = project(net.random_flow(rng, batch=restarts), f)
        for _ in range(max_iter):
            grad = 2.0 * (x @ P.T - yq) @ P
            x_new = project(x - step * grad, f)
            moved = L * np.max(np.linalg.norm(x_new - x, axis=-1))
            x = x_new
            if moved <= tol:
                break
        vals = np.linalg.norm(x @ P.T - yq, axis=-1)
        best = int(np.argmin(vals))
        values[f] = vals[best]
        points[f] = x[best]
    f_star = int(np.argmin(values))
    return EssenceResult(float(values[f_star] / net.total_rate), f_star, points[f_star], values)
