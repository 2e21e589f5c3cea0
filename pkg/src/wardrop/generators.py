"""Small random networks for property tests and demonstrations."""
from __future__ import annotations

import numpy as np

from .latency import LatencySpec
from .network import Edge, UserSpec, build_network, enumerate_paths


def _latency(rng, family, capacity_floor):
    if family == "affine":
        return LatencySpec.affine(rng.uniform(0.5, 5.0), rng.uniform(0.0, 10.0))
    if family == "monomial":
        return LatencySpec.monomial(rng.uniform(0.5, 3.0), int(rng.integers(1, 4)), rng.uniform(0.0, 5.0))
    if family == "mm1":
        return LatencySpec.mm1(capacity_floor + rng.uniform(0.5, 3.0))
    if family == "constant":
        return LatencySpec.constant(rng.uniform(1.0, 10.0))
    raise ValueError(family)


def random_network(rng, max_nodes=6, max_edges=10, max_users=4, families=("affine", "monomial", "mm1"),
                   max_paths=6, min_users=1):
    """Random acyclic network whose users each have at least two paths.

    M/M/1 capacities exceed the total demand, so every assignment is feasible.
    Retries until the random graph admits ``min_users`` users.
    """
    while True:
        n = int(rng.integers(3, max_nodes + 1))
        nodes = [f"n{k}" for k in range(n)]
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
        m = int(rng.integers(n, max_edges + 1))
        chosen = rng.choice(len(pairs), size=min(m, len(pairs)), replace=False)
        raw = [pairs[k] for k in sorted(chosen)]
        # parallel edges make multi-path pairs more common
        while len(raw) < m:
            raw.append(pairs[int(rng.integers(len(pairs)))])
        probe = [Edge(f"e{k}", nodes[a], nodes[b], LatencySpec.constant(1.0)) for k, (a, b) in enumerate(raw)]
        candidates = []
        for a in range(n):
            for b in range(a + 1, n):
                paths = enumerate_paths(probe, nodes[a], nodes[b], cap=10_000)
                if len(paths) >= 2:
                    candidates.append((a, b, paths))
        if len(candidates) < min_users:
            continue
        k = int(rng.integers(min_users, min(max_users, len(candidates)) + 1))
        picks = rng.choice(len(candidates), size=k, replace=False)
        rates = rng.uniform(0.5, 3.0, size=k)
        users = []
        for uid, (idx, rate) in enumerate(zip(picks, rates)):
            a, b, paths = candidates[idx]
            if len(paths) > max_paths:
                keep = sorted(rng.choice(len(paths), size=max_paths, replace=False))
                paths = [paths[j] for j in keep]
            users.append(UserSpec(str(uid + 1), nodes[a], nodes[b], float(rate), [list(p) for p in paths]))
        total = float(rates.sum())
        edges = [Edge(e.id, e.tail, e.head, _latency(rng, families[int(rng.integers(len(families)))], total))
                 for e in probe]
        return build_network(nodes, edges, users)
