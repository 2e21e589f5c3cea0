"""Monte Carlo and analytical checks of stability, hitting-time and recurrence bounds."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .equilibria import classify_equilibrium, strict_vertex
from .errors import ConditionError, NotWardropError
from .latency import NoiseSpec, adjoint_potential, relative_entropy
from .dynamics import SimConfig, entropy_generator, score_states, sde_states
from .network import Network, boundary_point, essence, projective_distance

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"


@dataclass
class Verdict:
    name: str
    outcome: str        # PASS | FAIL | INCONCLUSIVE
    empirical: float
    bound: float
    tolerance: float = 0.0
    detail: str = ""

    @property
    def passed(self):
        return self.outcome == PASS


@dataclass
class ExperimentReport:
    kind: str
    inputs: dict
    statistics: dict
    bounds: dict
    verdicts: list = field(default_factory=list)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def outcome(self):
        outcomes = {v.outcome for v in self.verdicts}
        if FAIL in outcomes:
            return FAIL
        if INCONCLUSIVE in outcomes:
            return INCONCLUSIVE
        return PASS

    @property
    def passed(self):
        return self.outcome == PASS

    def to_dict(self):
        return {
            "kind": self.kind, "outcome": self.outcome, "inputs": _plain(self.inputs),
            "statistics": _plain(self.statistics), "bounds": _plain(self.bounds),
            "verdicts": [_plain(asdict(v)) for v in self.verdicts],
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# aggregates and thresholds


def min_slope(net: Network, margin=1e-9):
    """Infimum of the latency slopes over the loads the used edges can carry.

    Each used edge ranges over 0 <= y <= min(usable demand + background,
    capacity - margin); every family has a nondecreasing slope there, so the
    infimum sits at y = 0 and has a closed form.
    """
    used = net.used_edges()
    slopes = []
    for r in used:
        spec = net.edges[r].latency
        if spec.family == "affine":
            slopes.append(spec.slope)
        elif spec.family == "constant":
            slopes.append(0.0)
        elif spec.family == "monomial":
            slopes.append(spec.slope if spec.exponent == 1 else 0.0)
        else:
            slopes.append(1.0 / spec.capacity ** 2)
    return float(min(slopes)) if slopes else 0.0


@dataclass
class Aggregates:
    rho: float
    sigma2: float
    mean_rate: float
    margin: float | None = None   # rate-weighted strict margin
    m: float | None = None
    kappa: float | None = None


def aggregates(net: Network, rates, noise: NoiseSpec, margins=None):
    lam = np.broadcast_to(np.asarray(rates, dtype=float), (net.n_users,))
    rho = net.total_rate
    agg = Aggregates(rho, noise.total_variance, float(net.rates @ lam / rho))
    if margins is not None:
        agg.margin = float(net.rates @ np.asarray(margins) / rho)
    return agg


def _classify(net, q, allow=("strict", "interior"), tol=1e-6):
    try:
        cls = classify_equilibrium(net, q, tol=tol, with_essence=False)
    except NotWardropError as exc:
        raise ConditionError(str(exc)) from exc
    if cls.kind not in allow:
        raise ConditionError(f"equilibrium is {cls.kind}; this check needs {' or '.join(allow)}")
    return cls


def slow_learning_check(net: Network, q, rates, noise: NoiseSpec) -> ExperimentReport:
    """Compare the learning rates with the noise-tolerance threshold at ``q``.

    Strict q: lambda_bar * sigma^2 < margin. Interior q:
    lambda_bar < (4/5) m rho kappa^2 / sigma^2.
    """
    cls = _classify(net, q)
    agg = aggregates(net, rates, noise, cls.margins)
    if cls.kind == "strict":
        lhs, threshold = agg.mean_rate * agg.sigma2, agg.margin
        name = "lambda_bar*sigma^2 < margin"
    else:
        agg.m = min_slope(net)
        agg.kappa = essence(net, q).kappa
        lhs = agg.mean_rate
        threshold = math.inf if agg.sigma2 == 0 else 0.8 * agg.m * agg.rho * agg.kappa ** 2 / agg.sigma2
        name = "lambda_bar < (4/5) m rho kappa^2 / sigma^2"
    ok = lhs < threshold
    v = Verdict(name, PASS if ok else FAIL, lhs, threshold, detail=f"margin {threshold - lhs:.6g}")
    return ExperimentReport("slow-learning", {"classification": cls.kind, "rates": np.asarray(rates)},
                            asdict(agg), {"threshold": threshold}, [v])


def hitting_time_bound(H, margin, rho, delta):
    """Upper bound (2H/margin) * 2 rho / (delta (2 rho - delta)) on the mean hitting time."""
    if not (0 < delta < 2 * rho):
        raise ValueError(f"delta must lie in (0, 2*rho) = (0, {2 * rho}); got {delta}")
    if not H < math.inf:
        raise ValueError("entropy of the starting point must be finite")
    if H == 0:
        return 0.0
    denom = delta * (2 * rho - delta) * margin
    with np.errstate(over="ignore", divide="ignore"):
        value = np.float64(4.0 * H * rho) / np.float64(denom) if denom > 0 else np.inf
    return float(value) if np.isfinite(value) and value < 1e300 else math.inf


def theta_lambda(m, rho, kappa, lam, sigma2):
    """Radius (1/2)(m rho kappa^2 / (lambda sigma^2) - 1)^(-1/2) of the concentration ball."""
    if lam == 0 or sigma2 == 0:
        return 0.0
    ratio = m * rho * kappa ** 2 / (lam * sigma2)
    if not ratio > 1:
        raise ConditionError(f"m rho kappa^2/(lambda sigma^2) = {ratio:.6g} <= 1; no recurrence bound")
    return 0.5 / math.sqrt(ratio - 1.0)


# ---------------------------------------------------------------------------
# Monte Carlo


def _states(net, x0, cfg, noise, replicates, dynamics):
    if dynamics == "replicator":
        return sde_states(net, x0, cfg, noise, replicates)
    if dynamics == "exponential":
        return score_states(net, x0, cfg, noise, replicates)
    raise ValueError(f"unknown dynamics {dynamics!r}")


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def _strict_reference(net, q, rates, noise):
    report = slow_learning_check(net, q, rates, noise)
    if report.inputs["classification"] != "strict":
        raise ConditionError("this experiment needs a strict equilibrium")
    if not report.passed:
        v = report.verdicts[0]
        raise ConditionError(f"slow-learning condition fails: {v.empirical:.6g} >= {v.bound:.6g}")
    return strict_vertex(net, q), report


def estimate_hitting_time(net: Network, q, delta, x0, cfg: SimConfig, noise: NoiseSpec, replicates=500,
                          t_max=None, dynamics="replicator", se_slack=2.0, cap_limit=0.05) -> ExperimentReport:
    """First time each replicate enters the L1 ball of radius ``delta`` around strict ``q``.

    Passes when mean - se_slack*SE stays below the theoretical bound; more
    than ``cap_limit`` replicates hitting the horizon makes it inconclusive.
    """
    rates = cfg.user_rates(net)
    q, slow = _strict_reference(net, q, rates, noise)
    x0 = np.asarray(x0, dtype=float)
    H0 = float(relative_entropy(net, q, x0, rates))
    margin = slow.statistics["margin"]
    bound = hitting_time_bound(H0, margin, net.total_rate, delta)
    if t_max is None:
        t_max = 20.0 * bound if math.isfinite(bound) and bound > 0 else 100.0
    run = replace(cfg, horizon=float(t_max))
    tau = np.full(replicates, np.nan)
    for k, X in _states(net, x0, run, noise, replicates, dynamics):
        dist = np.abs(X - q).sum(axis=-1)
        hit = np.isnan(tau) & (dist <= delta)
        tau[hit] = k * run.dt
        if not np.isnan(tau).any():
            break
    capped = np.isnan(tau)
    tau_filled = np.where(capped, run.n_steps * run.dt, tau)
    mean, se = _mean_se(tau_filled)
    cap_fraction = float(capped.mean())
    if capped.all() or cap_fraction > cap_limit:
        outcome = INCONCLUSIVE
    else:
        outcome = PASS if mean - se_slack * se <= bound else FAIL
    v = Verdict("mean hitting time <= bound", outcome, mean, bound, se_slack * se,
                f"SE {se:.4g}, capped {cap_fraction:.3%}")
    return ExperimentReport(
        "hitting-time",
        {"delta": delta, "x0": x0, "replicates": replicates, "seed": cfg.seed, "dt": cfg.dt,
         "t_max": t_max, "dynamics": dynamics, "rates": rates, "sigma": noise.sigma},
        {"mean": mean, "se": se, "cap_fraction": cap_fraction, "entropy_x0": H0,
         "min": float(np.nanmin(tau)) if not capped.all() else math.nan,
         "max": float(np.nanmax(tau)) if not capped.all() else math.nan},
        {"hitting_time_bound": bound, "margin": margin},
        [v], {"tau": tau_filled, "capped": capped},
    )


def sphere_starts(net: Network, q, radius, rng, count):
    """Random flows at L1 distance exactly ``radius`` from the pure flow ``q``.

    Half the radius is removed from the used paths (split across users at
    random, capped by each rate) and spread over the unused ones.
    """
    q = np.asarray(q, dtype=float)
    if radius / 2 > net.total_rate:
        raise ValueError("radius exceeds the diameter of the flow polytope")
    X = np.repeat(q[None, :], count, axis=0)
    share = rng.dirichlet(np.ones(net.n_users), size=count) * (radius / 2)
    share = _cap_shares(share, net.rates, radius / 2)
    for i, s in enumerate(net.user_slices):
        used = s.start + int(np.argmax(q[s]))
        others = [j for j in range(s.start, s.stop) if j != used]
        X[:, used] -= share[:, i]
        X[:, others] += share[:, i:i + 1] * rng.dirichlet(np.ones(len(others)), size=count)
    return X


def _cap_shares(share, caps, total):
    # move any excess over a user's rate to users with room left
    for _ in range(len(caps) + 1):
        excess = np.maximum(share - caps, 0.0)
        if not excess.any():
            break
        share = np.minimum(share, caps)
        room = caps - share
        need = excess.sum(axis=1, keepdims=True)
        share = share + need * room / room.sum(axis=1, keepdims=True)
    return share


def stability_probability(net: Network, q, start_radius, cfg: SimConfig, noise: NoiseSpec, replicates=200,
                          T=200.0, tube_factor=10.0, end_factor=0.1, level=0.95, radius_grid=None,
                          dynamics="replicator") -> ExperimentReport:
    """Fraction of runs started at L1 distance ``start_radius`` from strict ``q``
    that stay in the tube of radius tube_factor*start_radius and end within
    end_factor*start_radius. With ``radius_grid`` the joint fraction must also
    be non-decreasing as the radius shrinks (up to two binomial SEs)."""
    rates = cfg.user_rates(net)
    q, _ = _classify_strict_only(net, q)
    radii = [start_radius] if radius_grid is None else sorted(radius_grid, reverse=True)
    run = replace(cfg, horizon=float(T))
    rows = []
    for j, r in enumerate(radii):
        rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(1_000_000 + j,)))
        X0 = sphere_starts(net, q, r, rng, replicates)
        run_j = replace(run, seed=int(cfg.seed) + j)
        max_dist = np.zeros(replicates)
        final = None
        for _, X in _states(net, X0, run_j, noise, replicates, dynamics):
            dist = np.abs(X - q).sum(axis=-1)
            max_dist = np.maximum(max_dist, dist)
            final = dist
        stay = max_dist <= tube_factor * r
        end = final <= end_factor * r
        rows.append({"radius": r, "stay": float(stay.mean()), "end": float(end.mean()),
                     "joint": float((stay & end).mean())})
    main = next(row for row in rows if row["radius"] == start_radius) if start_radius in radii else rows[0]
    verdicts = [Verdict(f"fraction stable >= {level}", PASS if main["joint"] >= level else FAIL,
                        main["joint"], level)]
    if len(rows) > 1:
        fr = [row["joint"] for row in rows]
        se = [math.sqrt(max(p * (1 - p), 1.0 / replicates) / replicates) for p in fr]
        worst = min(fr[k + 1] - fr[k] + 2 * math.hypot(se[k], se[k + 1]) for k in range(len(fr) - 1))
        verdicts.append(Verdict("non-decreasing as radius shrinks", PASS if worst >= 0 else FAIL,
                                worst, 0.0, detail=str(fr)))
    return ExperimentReport(
        "stability",
        {"start_radius": start_radius, "radius_grid": radii, "T": T, "replicates": replicates,
         "seed": cfg.seed, "dt": cfg.dt, "rates": rates, "sigma": noise.sigma, "dynamics": dynamics},
        {"by_radius": rows, "fraction": main["joint"]}, {"level": level}, verdicts,
    )


def _classify_strict_only(net, q):
    cls = _classify(net, q, allow=("strict",))
    return strict_vertex(net, q), cls


def estimate_invariant_measure(net: Network, q, cfg: SimConfig, noise: NoiseSpec, T, burn_in,
                               theta_grid=(0.25, 0.5, 0.75, 1.0), x0=None, n_batches=20, se_slack=3.0,
                               checkpoints=10) -> ExperimentReport:
    """Long-run occupancy of the projective balls around interior ``q``.

    One trajectory; after ``burn_in`` the time is cut into ``n_batches``
    equal batches whose means give standard errors. Verdicts: occupancy of
    each ball of radius theta > theta_lambda is at least
    1 - theta_lambda^2/theta^2 - slack*SE; the time average of Theta^2 is at
    most theta_lambda^2 + C/T + slack*SE; occupancy is monotone in theta.
    """
    if net.redundancy_info.redundancy > 0:
        raise ConditionError("network is reducible; the stochastic dynamics are not recurrent around q")
    q = np.asarray(q, dtype=float)
    _classify(net, q, allow=("interior",))
    rates = cfg.user_rates(net)
    slow = slow_learning_check(net, q, rates, noise)
    if not slow.passed:
        v = slow.verdicts[0]
        raise ConditionError(f"slow-learning condition fails: {v.empirical:.6g} >= {v.bound:.6g}")
    st = slow.statistics
    lam0 = st["m"] * st["rho"] * st["kappa"] ** 2 / st["sigma2"]
    th_l = theta_lambda(st["m"], st["rho"], st["kappa"], st["mean_rate"], st["sigma2"])
    x0 = q.copy() if x0 is None else np.asarray(x0, dtype=float)
    H0 = float(relative_entropy(net, q, x0, rates))
    C = 2.0 * H0 / (st["rho"] * st["sigma2"] * (lam0 - st["mean_rate"]))

    grid = np.sort(np.asarray(theta_grid, dtype=float))
    run = replace(cfg, horizon=float(T))
    burn_steps = int(round(burn_in / cfg.dt))
    total_steps = run.n_steps
    if total_steps - burn_steps < n_batches:
        raise ValueError("horizon too short after burn-in for the requested batches")
    per_batch = (total_steps - burn_steps) // n_batches
    occ = np.zeros((n_batches, len(grid)))
    th2 = np.zeros(n_batches)
    full_sum = 0.0                     # integral of Theta^2 from time 0, for the C/T form
    marks = np.linspace(0, total_steps, checkpoints + 1)[1:].round().astype(int)
    averages = []
    for k, X in sde_states(net, x0, run, noise):
        if k == 0:
            continue
        theta = float(projective_distance(q, X[0]))
        full_sum += theta * theta
        if k in marks:
            averages.append((k * cfg.dt, full_sum / k))
        b = (k - burn_steps - 1) // per_batch
        if k > burn_steps and b < n_batches:
            occ[b] += theta <= grid
            th2[b] += theta * theta
    occ /= per_batch
    th2 /= per_batch
    occupancy = occ.mean(axis=0)
    occ_se = occ.std(axis=0, ddof=1) / math.sqrt(n_batches)
    avg_th2, th2_se = _mean_se(th2)

    verdicts = []
    for theta, o, se in zip(grid, occupancy, occ_se):
        if theta > th_l:
            bound = 1.0 - th_l ** 2 / theta ** 2
            verdicts.append(Verdict(f"occupancy(theta={theta:g}) >= 1 - theta_l^2/theta^2",
                                    PASS if o >= bound - se_slack * se else FAIL, float(o), bound,
                                    se_slack * float(se)))
    bound_avg = th_l ** 2 + C / T
    verdicts.append(Verdict("time average of Theta^2 <= theta_l^2 + C/T",
                            PASS if avg_th2 <= bound_avg + se_slack * th2_se else FAIL,
                            avg_th2, bound_avg, se_slack * th2_se))
    mono = bool(np.all(np.diff(occupancy) >= 0))
    verdicts.append(Verdict("occupancy non-decreasing in theta", PASS if mono else FAIL,
                            float(np.min(np.diff(occupancy))) if len(grid) > 1 else 0.0, 0.0))
    return ExperimentReport(
        "invariant-measure",
        {"T": T, "burn_in": burn_in, "theta_grid": grid, "seed": cfg.seed, "dt": cfg.dt,
         "rates": rates, "sigma": noise.sigma, "batches": n_batches},
        {"occupancy": dict(zip(map(float, grid), map(float, occupancy))),
         "occupancy_se": dict(zip(map(float, grid), map(float, occ_se))),
         "theta2_average": avg_th2, "theta2_se": th2_se, "running_average": averages,
         "m": st["m"], "kappa": st["kappa"], "mean_rate": st["mean_rate"], "sigma2": st["sigma2"]},
        {"theta_lambda": th_l, "lambda_0": lam0, "C": C,
         "occupancy_bounds": {float(t): 1.0 - th_l ** 2 / t ** 2 for t in grid if t > th_l}},
        verdicts,
    )


def check_adjoint_lemmas(net: Network, q, sample_count=10_000, seed=0, tol=1e-9) -> ExperimentReport:
    """Sample rays q + t z and test the lower bounds on the adjoint potential.

    Strict q: L_q(q + t z) >= (1/2) sum_i margin_i |z_i|_1 t for z = p - q, p in the polytope.
    Interior q: L_q(q + t z) >= (1/2) m |P z|^2 t^2 for z reaching the boundary.
    """
    cls = _classify(net, q)
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, size=sample_count)
    t[0] = 0.0
    p = net.random_flow(rng, batch=sample_count)
    if cls.kind == "strict":
        q = strict_vertex(net, q)
        z = p - q
        norms = np.stack([np.abs(z[:, s]).sum(axis=1) for s in net.user_slices], axis=1)
        rhs = 0.5 * (norms @ cls.margins) * t
        m = None
    else:
        q = np.asarray(q, dtype=float)
        z = boundary_point(q, p) - q
        m = min_slope(net)
        rhs = 0.5 * m * np.sum((z @ net.P.T) ** 2, axis=1) * t ** 2
    x = q + t[:, None] * z
    x = np.maximum(x, 0.0)
    lhs = adjoint_potential(net, q, x)
    slack = lhs - rhs
    violations = int(np.sum(slack < -tol))
    worst = float(slack.min())
    v = Verdict("adjoint lower bound", PASS if violations == 0 else FAIL, worst, -tol,
                detail=f"{violations} violations in {sample_count} samples")
    return ExperimentReport("adjoint-lemmas",
                            {"classification": cls.kind, "samples": sample_count, "seed": seed},
                            {"worst_margin": worst, "violations": violations, "m": m},
                            {"tolerance": tol}, [v])


def entropy_drift(net: Network, q, x, rates, noise: NoiseSpec, h=1e-3, replicates=10_000, seed=0,
                  substeps=1, se_slack=3.0) -> ExperimentReport:
    """Empirical drift E[H_q(X(h)) - H_q(x)]/h over independent SDE copies started at ``x``,
    compared with the closed-form generator."""
    x = np.asarray(x, dtype=float)
    cfg = SimConfig(rates=rates, dt=h / substeps, horizon=h, seed=seed, scheme="euler-maruyama")
    H0 = float(relative_entropy(net, q, x, rates))
    X = x
    for _, X in sde_states(net, x, cfg, noise, replicates):
        pass
    samples = (relative_entropy(net, q, X, rates) - H0) / h
    mean, se = _mean_se(samples)
    exact = float(entropy_generator(net, q, x, rates, noise))
    ok = abs(mean - exact) <= se_slack * se
    v = Verdict("empirical drift matches generator", PASS if ok else FAIL, mean, exact, se_slack * se,
                f"SE {se:.4g}")
    return ExperimentReport("entropy-drift",
                            {"x": x, "h": h, "replicates": replicates, "seed": seed, "substeps": substeps},
                            {"mean": mean, "se": se}, {"generator": exact}, [v])
