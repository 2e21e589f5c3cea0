"""Wardrop equilibria and social optima via minimisation of the congestion potential."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, linprog

from .errors import NoFeasibleFlowError, NotWardropError, WardropError
from .latency import MM1_GUARD, aggregate_delay, marginal_increasing, path_delays, rosenthal_potential
from .network import Network, essence

# x_{i,a} > SUPPORT_RTOL * rho_i counts as a used path
SUPPORT_RTOL = 1e-8
DEFAULT_TOL = 1e-9

CLASSES = ("interior", "strict", "pure-nonstrict", "boundary-mixed")


def supported(net: Network, x):
    return np.asarray(x) > SUPPORT_RTOL * net.path_rates


def _user_min(net, values):
    return np.stack([values[..., s].min(axis=-1) for s in net.user_slices], axis=-1)


def wardrop_gap(net: Network, x, marginal=False):
    """(absolute, relative) Wardrop gap; both vanish exactly at equilibria."""
    x = np.asarray(x, dtype=float)
    omega = path_delays(net, x, marginal=marginal).path
    best = _user_min(net, omega)[..., net.owner]
    absolute = np.sum(x * (omega - best), axis=-1)
    total = np.sum(x * omega, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(total > 0, absolute / total, 0.0)
    if np.ndim(absolute) == 0:
        return float(absolute), float(relative)
    return absolute, relative


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class Violation:
    user: str
    path: str
    faster_path: str
    margin: float


@dataclass
class WardropCheck:
    passed: bool
    violations: list

    def __bool__(self):
        return self.passed


def verify_wardrop(net: Network, x, tol=1e-6, marginal=False) -> WardropCheck:
    """Every supported path must be within ``tol`` of its user's fastest path."""
    x = np.asarray(x, dtype=float)
    omega = path_delays(net, x, marginal=marginal).path
    used = supported(net, x)
    violations = []
    for u, s in zip(net.users, net.user_slices):
        w = omega[s]
        fastest = int(np.argmin(w))
        for j in np.flatnonzero(used[s]):
            margin = float(w[j] - w[fastest])
            if margin > tol:
                violations.append(Violation(u.id, u.labels[j], u.labels[fastest], margin))
    return WardropCheck(not violations, violations)


@dataclass
class WorstDelayCheck:
    passed: bool
    best_deviation: dict     # user id -> (deviation flow, worst delay) of the best probe
    improvements: dict       # user id -> largest decrease in worst delay found
    probes: int
    skipped: int

    def __bool__(self):
        return self.passed


def _compositions(n_units, parts):
    """All nonnegative integer vectors of length ``parts`` summing to ``n_units``."""
    if parts == 1:
        return np.array([[n_units]])
    rows = []
    for bars in itertools.combinations(range(n_units + parts - 1), parts - 1):
        edges = (-1,) + bars + (n_units + parts - 1,)
        rows.append([edges[k + 1] - edges[k] - 1 for k in range(parts)])
    return np.array(rows)


def verify_worst_delay_equilibrium(net: Network, x, grid_resolution=1 / 60, tol=1e-9,
                                   chunk=20_000) -> WorstDelayCheck:
    """Brute-force test that no user can lower its worst used-path delay unilaterally.

    Each user's deviations range over the grid of its simplex with spacing
    ``grid_resolution * rho_i``; probes that overload an M/M/1 edge are skipped.
    """
    x = np.asarray(x, dtype=float)
    prof = path_delays(net, x)
    n_units = int(round(1.0 / grid_resolution))
    passed, best, improvements = True, {}, {}
    probes = skipped = 0
    for i, (u, s) in enumerate(zip(net.users, net.user_slices)):
        current = float(prof.worst[i])
        grid = _compositions(n_units, s.stop - s.start) * (net.rates[i] / n_units)
        best_val, best_dev = np.inf, None
        for start in range(0, len(grid), chunk):
            dev = grid[start:start + chunk]
            X = np.repeat(x[None, :], len(dev), axis=0)
            X[:, s] = dev
            y = net.loads(X)
            ok = net.costs.feasible(y)
            skipped += int(np.sum(~ok))
            probes += int(np.sum(ok))
            if not ok.any():
                continue
            omega = net.costs.phi(y[ok]) @ net.P[:, s]
            worst = np.max(np.where(dev[ok] > 0, omega, -np.inf), axis=-1)
            k = int(np.argmin(worst))
            if worst[k] < best_val:
                best_val, best_dev = float(worst[k]), dev[ok][k]
        improvements[u.id] = current - best_val
        best[u.id] = (best_dev, best_val)
        if best_val < current - tol:
            passed = False
    return WorstDelayCheck(passed, best, improvements, probes, skipped)


# ---------------------------------------------------------------------------
# solver


@dataclass
class EquilibriumReport:
    flow: np.ndarray
    loads: np.ndarray
    delays: np.ndarray
    gap: float                    # relative Wardrop gap
    gap_absolute: float
    converged: bool
    iterations: int
    solve_time: float
    potential: float
    aggregate_delay: float        # sum_r y_r phi_r(y_r), original latencies
    marginal: bool = False
    classification: str | None = None
    redundancy: int = 0
    wardrop_set_dimension: int | None = None
    margins: np.ndarray | None = None       # per-user delay margins (strict case)
    aggregate_margin: float | None = None   # rate-weighted mean margin (strict case)
    kappa: float | None = None              # essence (interior case)
    gap_history: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self, net: Network):
        out = {
            "flow": {n: float(v) for n, v in zip(net.path_names, self.flow)},
            "loads": {e.id: float(v) for e, v in zip(net.edges, self.loads)},
            "delays": {n: float(v) for n, v in zip(net.path_names, self.delays)},
            "relative_gap": self.gap,
            "absolute_gap": self.gap_absolute,
            "converged": self.converged,
            "iterations": self.iterations,
            "solve_time": self.solve_time,
            "potential": self.potential,
            "aggregate_delay": self.aggregate_delay,
            "marginal_model": self.marginal,
            "classification": self.classification,
            "redundancy": self.redundancy,
            "wardrop_set_dimension": self.wardrop_set_dimension,
        }
        if self.margins is not None:
            out["margins"] = {u.id: float(m) for u, m in zip(net.users, self.margins)}
            out["aggregate_margin"] = self.aggregate_margin
        if self.kappa is not None:
            out["essence"] = self.kappa
        return out


def feasible_start(net: Network, costs=None):
    """A flow keeping every M/M/1 edge strictly below capacity.

    Tries the all-or-nothing assignment at free-flow delays first and falls
    back to the max-slack flow of a linear program.
    """
    costs = net.costs if costs is None else costs
    free = costs.phi(net.background, check=False) @ net.P
    x = _all_or_nothing(net, free)
    if costs.feasible(net.loads(x)):
        return x
    mm1 = np.flatnonzero(costs.is_mm1)
    n = net.n_paths
    # variables (x, t): maximise t subject to P x + bg + t <= mu on M/M/1 edges
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([net.P[mm1], np.ones((len(mm1), 1))])
    b_ub = costs.mu[mm1] - net.background[mm1]
    A_eq = np.hstack([net.M, np.zeros((net.n_users, 1))])
    bounds = [(0, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=net.rates, bounds=bounds, method="highs")
    if res.status != 0 or -res.fun <= 1e-9:
        raise NoFeasibleFlowError("every assignment of the demand saturates an M/M/1 edge")
    x = np.maximum(res.x[:n], 0.0)
    return _renormalise(net, x)


def _renormalise(net, x):
    sums = x @ net.M.T
    return x * (net.rates / sums)[net.owner]


def _all_or_nothing(net, omega, rng=None, tie_rtol=1e-12):
    s = np.zeros(net.n_paths)
    for i, sl in enumerate(net.user_slices):
        w = omega[sl]
        if rng is None:
            j = int(np.argmin(w))
        else:
            lo = w.min()
            ties = np.flatnonzero(w <= lo + tie_rtol * max(abs(lo), 1.0))
            j = int(rng.choice(ties))
        s[sl.start + j] = net.rates[i]
    return s


def _away_vertex(net, x, omega):
    v = np.zeros(net.n_paths)
    for i, sl in enumerate(net.user_slices):
        w = np.where(x[sl] > 0, omega[sl], -np.inf)
        v[sl.start + int(np.argmax(w))] = net.rates[i]
    return v


def _line_search(costs, P, y, d, gamma_max):
    """argmin over [0, gamma_max] of the potential along x + gamma d (convex)."""
    yd = P @ d
    hi = gamma_max
    if costs._any_mm1:
        grow = costs.is_mm1 & (yd > 0)
        if grow.any():
            hi = min(hi, float(np.min((costs.mu[grow] - MM1_GUARD - y[grow]) / yd[grow])))
    hi = max(hi, 0.0)

    def slope(g):
        return float(costs.phi(y + g * yd, check=False) @ yd)

    if hi == 0.0 or slope(hi) <= 0.0:
        return hi
    if slope(0.0) >= 0.0:
        return 0.0
    return brentq(slope, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def solve_wardrop(net: Network, tol=DEFAULT_TOL, max_iters=20_000, marginal=False, x0=None,
                  tie_break="lowest", seed=None, classify=True) -> EquilibriumReport:
    """Minimise the potential by Frank-Wolfe with away steps and exact line search.

    Each iteration compares the all-or-nothing direction (every user to its
    fastest path) with the away direction (every user off its slowest used
    path) and moves along the steeper one. Stops once the relative Wardrop gap
    drops to ``tol``. ``tie_break="random"`` breaks fastest-path ties with a
    generator seeded by ``seed``.
    """
    t0 = time.perf_counter()
    costs = net.costs.with_marginal() if marginal else net.costs
    rng = np.random.default_rng(seed) if tie_break == "random" else None
    if x0 is None:
        x = feasible_start(net, costs)
    else:
        x = net.validate_flow(np.array(x0, dtype=float))
        costs.check(net.loads(x))

    P = net.P
    history = []
    best_x, best_gap = x.copy(), np.inf
    converged = False
    it = 0
    for it in range(max_iters + 1):
        y = net.loads(x)
        omega = costs.phi(y) @ P
        total = float(x @ omega)
        s = _all_or_nothing(net, omega, rng)
        gap_fw = float((x - s) @ omega)
        rel = gap_fw / total if total > 0 else 0.0
        history.append(rel)
        if rel < best_gap:
            best_x, best_gap = x.copy(), rel
        if rel <= tol:
            converged = True
            break
        if it == max_iters:
            break
        v = _away_vertex(net, x, omega)
        gap_away = float((v - x) @ omega)
        if gap_fw >= gap_away:
            d, gamma_max = s - x, 1.0
        else:
            alpha = min(x[j] / net.rates[net.owner[j]] for j in np.flatnonzero(v))
            d = x - v
            gamma_max = alpha / (1.0 - alpha) if alpha < 1.0 else np.inf
        gamma = _line_search(costs, P, y, d, gamma_max)
        if gamma == 0.0:
            break
        x = np.maximum(x + gamma * d, 0.0)
        if gamma == gamma_max and gap_fw < gap_away:
            # drop step: the away coordinates vanish exactly
            for j in np.flatnonzero(v):
                if x[j] <= 1e-15 * net.rates[net.owner[j]]:
                    x[j] = 0.0
        x = _renormalise(net, x)

    x = best_x
    y = net.loads(x)
    prof = path_delays(net, x, marginal=marginal)
    gap_abs, gap_rel = wardrop_gap(net, x, marginal=marginal)
    report = EquilibriumReport(
        flow=x, loads=y, delays=prof.path, gap=gap_rel, gap_absolute=gap_abs,
        converged=converged, iterations=it, solve_time=time.perf_counter() - t0,
        potential=float(rosenthal_potential(net, x, marginal=marginal)),
        aggregate_delay=float(aggregate_delay(net, x)), marginal=marginal,
        redundancy=net.redundancy_info.redundancy, gap_history=np.array(history),
    )
    if classify and converged:
        cls = classify_equilibrium(net, x, marginal=marginal)
        report.classification = cls.kind
        report.margins = cls.margins
        report.aggregate_margin = cls.aggregate_margin
        report.kappa = cls.kappa
        report.wardrop_set_dimension = wardrop_set_dimension(net, x, marginal=marginal)
    report.solve_time = time.perf_counter() - t0
    return report


def solve_social_optimum(net: Network, tol=DEFAULT_TOL, max_iters=20_000, **kw) -> EquilibriumReport:
    """Flow minimising aggregate delay: the equilibrium of the marginal-cost model."""
    y_max = net.total_rate + net.background
    for e, ym in zip(net.edges, y_max):
        if not marginal_increasing(e.latency, ym):
            raise WardropError(f"marginal latency of edge {e.id!r} is not increasing; "
                               "the optimum is not characterised by an equilibrium")
    return solve_wardrop(net, tol=tol, max_iters=max_iters, marginal=True, **kw)


# ---------------------------------------------------------------------------
# structure of an equilibrium


@dataclass
class Classification:
    kind: str
    margins: np.ndarray | None = None
    aggregate_margin: float | None = None
    kappa: float | None = None
    support: np.ndarray | None = None


def classify_equilibrium(net: Network, q, tol=1e-6, marginal=False, with_essence=True) -> Classification:
    """Interior, strict, pure-nonstrict or boundary-mixed."""
    q = np.asarray(q, dtype=float)
    check = verify_wardrop(net, q, tol=tol, marginal=marginal)
    if not check:
        v = check.violations[0]
        raise NotWardropError(f"flow is not a Wardrop equilibrium: user {v.user} uses {v.path} "
                              f"although {v.faster_path} is faster by {v.margin:.3g}")
    used = supported(net, q)
    if used.all():
        kappa = essence(net, q).kappa if with_essence else None
        return Classification("interior", kappa=kappa, support=used)
    omega = path_delays(net, q, marginal=marginal).path
    counts = np.array([used[s].sum() for s in net.user_slices])
    if np.all(counts == 1):
        margins = np.empty(net.n_users)
        for i, s in enumerate(net.user_slices):
            w = omega[s]
            j = int(np.flatnonzero(used[s])[0])
            margins[i] = np.min(np.delete(w, j)) - w[j]
        if np.all(margins > tol):
            agg = float(net.rates @ margins / net.total_rate)
            return Classification("strict", margins=margins, aggregate_margin=agg, support=used)
        return Classification("pure-nonstrict", support=used)
    return Classification("boundary-mixed", support=used)


def strict_vertex(net: Network, q):
    """Snap an (approximately) pure flow to the exact vertex it concentrates on."""
    q = np.asarray(q, dtype=float)
    return net.vertex([int(np.argmax(q[s])) for s in net.user_slices])


def wardrop_set_dimension(net: Network, q, tol=1e-6, marginal=False):
    """Dimension of the set of equilibrium flows through ``q``.

    Equilibria share the load profile of ``q`` and may only use paths that are
    fastest at ``q``; coordinates forced to zero are detected by one linear
    program per coordinate.
    """
    q = np.asarray(q, dtype=float)
    if supported(net, q).all():
        return net.redundancy_info.redundancy
    omega = path_delays(net, q, marginal=marginal).path
    best = _user_min(net, omega)[net.owner]
    allowed = np.flatnonzero(omega <= best + tol)
    P, M = net.P[:, allowed], net.M[:, allowed]
    A_eq = np.vstack([P, M])
    b_eq = np.concatenate([net.loads(q) - net.background, net.rates])
    free = []
    for k in range(len(allowed)):
        c = np.zeros(len(allowed))
        c[k] = -1.0
        res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * len(allowed), method="highs")
        if res.status == 0 and -res.fun > 1e-9 * net.path_rates[allowed[k]]:
            free.append(k)
    if not free:
        return 0
    A = A_eq[:, free]
    return len(free) - int(np.linalg.matrix_rank(A, tol=1e-10 * max(np.linalg.norm(A, 2), 1.0)))
