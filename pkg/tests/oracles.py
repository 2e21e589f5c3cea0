"""Reference computations that share no code with the package under test."""
from fractions import Fraction

import numpy as np
from scipy.integrate import solve_ivp


def exact_rank(rows):
    """Rank of an integer/rational matrix by fraction-exact Gaussian elimination."""
    m = [[Fraction(v) for v in row] for row in rows]
    if not m:
        return 0
    n_cols = len(m[0])
    rank = 0
    for c in range(n_cols):
        pivot = next((r for r in range(rank, len(m)) if m[r][c] != 0), None)
        if pivot is None:
            continue
        m[rank], m[pivot] = m[pivot], m[rank]
        for r in range(len(m)):
            if r != rank and m[r][c] != 0:
                f = m[r][c] / m[rank][c]
                m[r] = [a - f * b for a, b in zip(m[r], m[rank])]
        rank += 1
    return rank


def exact_redundancy(edge_ids, users):
    """users: list of path lists (edge-id sequences). Columns are e_mu - e_0 images."""
    cols = []
    for paths in users:
        base = set(paths[0])
        for p in paths[1:]:
            s = set(p)
            cols.append([int(e in s) - int(e in base) for e in edge_ids])
    if not cols:
        return 0
    rows = [list(r) for r in zip(*cols)]
    return len(cols) - exact_rank(rows)


def braess_delays_exact(x):
    """Path delays of the Braess network in rational arithmetic."""
    blue, red, green = (Fraction(v) for v in x)
    ab, ac, bd, cd, bc = blue + green, red, blue, red + green, green
    t_ab, t_ac, t_bd, t_cd, t_bc = 10 * ab, 50 + ac, 50 + bd, 10 * cd, 10 + bc
    return t_ab + t_bd, t_ac + t_cd, t_ab + t_bc + t_cd


def braess_potential_exact(x):
    blue, red, green = (Fraction(v) for v in x)
    ab, ac, bd, cd, bc = blue + green, red, blue, red + green, green
    return 5 * ab ** 2 + 50 * ac + ac ** 2 / 2 + 50 * bd + bd ** 2 / 2 + 5 * cd ** 2 + 10 * bc + bc ** 2 / 2


def bisect_theta(q, x, iters=200):
    """Smallest t in (0, 1] with q + (x - q)/t still in the closed positive orthant."""
    q, x = np.asarray(q, float), np.asarray(x, float)
    if np.allclose(q, x):
        return 0.0

    def inside(t):
        return np.all(q + (x - q) / t >= -1e-15)

    lo, hi = 0.0, 1.0
    if not inside(1.0):
        return 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if inside(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _simplex_projection_bisect(v, mass):
    lo, hi = v.min() - mass, v.max()
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.maximum(v - tau, 0).sum() > mass:
            lo = tau
        else:
            hi = tau
    return np.maximum(v - 0.5 * (lo + hi), 0)


def projected_gradient_equilibrium(phi, P, blocks, rates, x0, step, iters=200_000, tol=1e-13):
    """Minimise the potential by projected gradient; phi maps loads to edge delays."""
    x = np.array(x0, float)
    for _ in range(iters):
        g = phi(P @ x) @ P
        new = x - step * g
        for s, r in zip(blocks, rates):
            new[s] = _simplex_projection_bisect(new[s], r)
        if np.max(np.abs(new - x)) < tol:
            x = new
            break
        x = new
    return x


def replicator_ode_oracle(phi, P, blocks, rates, x0, T, rtol=1e-11, atol=1e-13, t_eval=None, events=None):
    """Replicator trajectory from scipy's adaptive integrator."""
    def f(t, x):
        w = phi(P @ x) @ P
        out = np.empty_like(x)
        for s, r in zip(blocks, rates):
            avg = x[s] @ w[s] / r
            out[s] = x[s] * (avg - w[s])
        return out
    return solve_ivp(f, (0, T), np.asarray(x0, float), method="DOP853", rtol=rtol, atol=atol,
                     t_eval=t_eval, events=events)


def ito_generator(H_grad, H_hess, drift, diffusion, x):
    """grad H . b + 1/2 tr(G G^T Hess H) evaluated directly."""
    G = diffusion(x)
    return H_grad(x) @ drift(x) + 0.5 * np.trace(G @ G.T @ H_hess(x))
