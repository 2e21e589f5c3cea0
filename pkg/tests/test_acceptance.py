"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a one-line summary of what it measured; the terminal
summary prints these as PASS/FAIL lines.
"""
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import braess_delays_exact, exact_redundancy
from wardrop.cli import main
from wardrop.dynamics import SimConfig, entropy_generator, integrate_ode, noise_increments
from wardrop.equilibria import (classify_equilibrium, solve_social_optimum, solve_wardrop, verify_wardrop,
                                verify_worst_delay_equilibrium)
from wardrop.errors import NotWardropError
from wardrop.experiments import (check_adjoint_lemmas, entropy_drift, estimate_hitting_time,
                                 estimate_invariant_measure, hitting_time_bound, slow_learning_check,
                                 stability_probability)
from wardrop.generators import random_network
from wardrop.latency import (NoiseSpec, path_covariance, path_delays, potential_gradient, relative_entropy,
                             rosenthal_potential)
from wardrop.network import redundancy, redundancy_lower_bound


@pytest.fixture
def summary(record_property):
    def write(text):
        record_property("summary", text)
        print(text)
    return write


def _paths(net):
    return [list(u.paths) for u in net.users]


def test_01_braess_equilibrium(tmp_path, summary):
    out = tmp_path / "analyze.json"
    t0 = time.perf_counter()
    code = main(["analyze", "builtin:braess", "--out", str(out), "--quiet"])
    elapsed = time.perf_counter() - t0
    eq = json.loads(out.read_text())["equilibrium"]
    flow = np.array(list(eq["flow"].values()))
    delays = np.array(list(eq["delays"].values()))
    summary(f"flow={flow.round(6).tolist()} delays={delays.round(6).tolist()} "
            f"gap={eq['relative_gap']:.2e} runtime={elapsed:.3f}s")
    assert code == 0
    assert np.max(np.abs(flow - 2.0)) <= 1e-4
    assert np.max(np.abs(delays - 92.0)) <= 1e-3
    assert eq["relative_gap"] < 1e-6
    assert elapsed < 1.0


def test_02_braess_disparity(braess, summary):
    exact = braess_delays_exact((3, 3, 0))
    assert exact == (Fraction(83), Fraction(83), Fraction(70))
    got = path_delays(braess, [3.0, 3.0, 0.0]).path
    err = float(np.max(np.abs(got - np.array([float(v) for v in exact]))))
    check = verify_wardrop(braess, [3.0, 3.0, 0.0])
    margin = max(v.margin for v in check.violations)
    ne2_disparity = verify_worst_delay_equilibrium(braess, [3.0, 3.0, 0.0], grid_resolution=1 / 60)
    ne2_equal = verify_worst_delay_equilibrium(braess, [2.0, 2.0, 2.0], grid_resolution=1 / 60)
    summary(f"delays(3,3,0)={got.tolist()} err={err:.1e} wardrop_margin={margin:g} "
            f"NE2(3,3,0)={ne2_disparity.passed} NE2(2,2,2)={ne2_equal.passed}")
    assert err <= 1e-9
    assert not check.passed and margin == pytest.approx(13.0, abs=1e-9)
    assert ne2_disparity.passed
    assert not ne2_equal.passed


def test_03_redundancy(braess, fig1a, fig1b, summary):
    values = {}
    for name, net in (("fig1a", fig1a), ("fig1b", fig1b), ("braess", braess)):
        red = redundancy(net).redundancy
        assert red == exact_redundancy([e.id for e in net.edges], _paths(net))
        values[name] = red
    rng = np.random.default_rng(2024)
    worst = np.inf
    mismatches = 0
    for _ in range(1000):
        net = random_network(rng, max_users=6)
        red = redundancy(net).redundancy
        mismatches += red != exact_redundancy([e.id for e in net.edges], _paths(net))
        worst = min(worst, red - redundancy_lower_bound(net))
    summary(f"red={values} random: min(red - lower_bound)={worst} oracle mismatches={mismatches}/1000")
    assert values == {"fig1a": 0, "fig1b": 1, "braess": 0}
    assert worst >= 0 and mismatches == 0


def _converge_batch(net, dt, seed):
    q = solve_wardrop(net, tol=1e-12).flow
    rng = np.random.default_rng(seed)
    X0 = net.random_flow(rng, batch=100)
    cfg = SimConfig(rates=1.0, dt=dt, horizon=500.0, q=q, stride=int(round(500.0 / dt)))
    return integrate_ode(net, X0, cfg)


def test_04_deterministic_convergence(braess, fig1b, summary):
    lines, ok = [], True
    finals = {}
    for name, net, dt in (("braess", braess, 0.01), ("fig1b", fig1b, 0.05)):
        traj = _converge_batch(net, dt, seed=4)
        gap = float(traj.diagnostics["gap"][-1].max())
        up_h, up_phi = traj.max_uptick["H_q"], traj.max_uptick["phi"]
        finals[name] = traj.final
        lines.append(f"{name}: max final gap {gap:.1e}, upticks H {up_h:.1e} phi {up_phi:.1e}")
        ok &= traj.completed and gap < 1e-6 and up_h <= 1e-9 and up_phi <= 1e-9
    loads = fig1b.loads(finals["fig1b"])
    spread = float(np.max(np.ptp(loads, axis=0)))
    flow_spread = float(np.max(np.ptp(finals["fig1b"], axis=0)))
    summary("; ".join(lines) + f"; fig1b load spread {spread:.1e} (flow spread {flow_spread:.1e})")
    assert ok
    assert spread <= 1e-4


def test_05_gradient_identity(summary):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        net = random_network(rng)
        x = net.random_flow(rng)
        g = potential_gradient(net, x)
        for a in range(net.n_paths):
            h = 1e-6 * max(1.0, x[a])
            e = np.zeros(net.n_paths)
            e[a] = h
            fd = (rosenthal_potential(net, x + e) - rosenthal_potential(net, x - e)) / (2 * h)
            worst = max(worst, abs(fd - g[a]) / max(abs(g[a]), 1e-12))
    summary(f"max relative error over 100 points: {worst:.2e}")
    assert worst <= 1e-5


def test_06_noise_model(fig1b, summary):
    noise = NoiseSpec(np.array([0.3, 0.5, 0.7, 0.4, 0.6]))
    dt = 0.05
    n = 100_000
    dU = noise_increments(fig1b, noise, dt, np.random.default_rng(6), size=n)
    S = path_covariance(fig1b, noise) * dt
    emp = dU.T @ dU / n          # the mean is known to be zero
    se = np.sqrt((S ** 2 + np.outer(S.diagonal(), S.diagonal())) / n)
    z = np.abs(emp - S) / se
    disjoint = int(np.sum(np.triu(S == 0, 1)))
    overlapping = int(np.sum(np.triu(S > 0, 1)))
    summary(f"max |emp - sigma^2 dt| / SE = {z.max():.2f}; pairs: {overlapping} overlapping, {disjoint} disjoint")
    assert disjoint > 0 and overlapping > 0
    assert np.all(z <= 3.0)


def test_07_generator(parallel2, disjoint_pair, summary):
    net, noise = parallel2.network, parallel2.noise
    q = solve_wardrop(net).flow
    points = [0.1, 0.3, 0.5, 0.7, 0.9]
    z = []
    for k, p in enumerate(points):
        rep = entropy_drift(net, q, np.array([p, 1 - p]), 0.1, noise, h=1e-3, replicates=10_000, seed=700 + k)
        z.append((rep.statistics["mean"] - rep.bounds["generator"]) / rep.statistics["se"])
    pair, pair_noise = disjoint_pair
    half = np.array([0.5, 0.5])
    value = entropy_generator(pair, half, half, 1.0, pair_noise)
    summary(f"z-scores {np.round(z, 2).tolist()}; disjoint pair generator = {float(value)!r}")
    assert np.all(np.abs(z) <= 3.0)
    assert value == 0.25


def test_08_stochastic_stability(parallel2, summary):
    net, noise = parallel2.network, parallel2.noise
    q = solve_wardrop(net).flow
    cfg = SimConfig(rates=0.1, dt=0.01, seed=8)
    rep = stability_probability(net, q, 0.05, cfg, noise, replicates=200, T=200.0)
    row = rep.statistics["by_radius"][0]
    summary(f"stay in tube {row['stay']:.3f}, end within 0.005 {row['end']:.3f}, joint {row['joint']:.3f}")
    assert row["joint"] >= 0.95


def test_09_hitting_time(parallel2, summary):
    net, noise = parallel2.network, parallel2.noise
    q = solve_wardrop(net).flow
    cfg = SimConfig(rates=0.1, dt=0.01, seed=9)
    rep = estimate_hitting_time(net, q, 0.2, [0.5, 0.5], cfg, noise, replicates=500)
    st = rep.statistics
    H = relative_entropy(net, q, [0.5, 0.5], 0.1)
    bound = hitting_time_bound(H, 8.0, 1.0, 0.2)
    summary(f"mean {st['mean']:.3f} (SE {st['se']:.3f}) vs bound {bound:.3f}; capped {st['cap_fraction']:.1%}")
    assert st["mean"] - 2 * st["se"] <= bound
    assert st["cap_fraction"] < 0.05


def test_10_invariant_measure(fig1a, summary):
    assert fig1a.redundancy_info.redundancy == 0
    q = solve_wardrop(fig1a, tol=1e-12).flow
    assert classify_equilibrium(fig1a, q).kind == "interior"
    noise = NoiseSpec.uniform(fig1a, 0.02)
    probe = slow_learning_check(fig1a, q, 1.0, noise).statistics
    lam = probe["m"] * probe["rho"] * probe["kappa"] ** 2 / (5.0 * probe["sigma2"])
    cfg = SimConfig(rates=lam, dt=0.02, seed=10)
    rep = estimate_invariant_measure(fig1a, q, cfg, noise, T=2000.0, burn_in=100.0,
                                     theta_grid=(0.125, 0.25, 0.5, 0.75, 1.0))
    st, bd = rep.statistics, rep.bounds
    occ = np.array(list(st["occupancy"].values()))
    occ_half, se_half = st["occupancy"][0.5], st["occupancy_se"][0.5]
    summary(f"theta_lambda={bd['theta_lambda']:.4f}; E[Theta^2]={st['theta2_average']:.4f} "
            f"(SE {st['theta2_se']:.1e}); occupancy(B_0.5)={occ_half:.3f} (SE {se_half:.1e}); "
            f"occupancy={np.round(occ, 3).tolist()}")
    assert bd["theta_lambda"] == pytest.approx(0.25, rel=1e-12)
    assert st["theta2_average"] <= 1 / 16 + 3 * st["theta2_se"]
    assert occ_half >= 0.75 - 3 * se_half
    assert np.all(np.diff(occ) >= 0)


def test_11_adjoint_inequalities(parallel2, braess, summary):
    counts = {}
    for name, net in (("parallel2", parallel2.network), ("braess", braess)):
        rep = check_adjoint_lemmas(net, solve_wardrop(net).flow, 10_000, seed=11)
        counts[name] = rep.statistics["violations"]
    rng = np.random.default_rng(1100)
    checked = {"strict": 0, "interior": 0}
    random_violations = 0
    for k in range(1000):
        net = random_network(rng)
        q = solve_wardrop(net, tol=1e-12, classify=False).flow
        try:
            kind = classify_equilibrium(net, q, with_essence=False).kind
        except NotWardropError:
            continue
        if kind not in checked:
            continue
        checked[kind] += 1
        rep = check_adjoint_lemmas(net, q, 1000, seed=k)
        random_violations += rep.statistics["violations"]
    summary(f"violations: {counts}; random networks checked {checked}, violations {random_violations}")
    assert counts == {"parallel2": 0, "braess": 0}
    assert random_violations == 0


def test_12_social_optimum(pigou, summary):
    so = solve_social_optimum(pigou)
    rng = np.random.default_rng(12)
    worst = -np.inf
    for _ in range(100):
        net = random_network(rng)
        opt, eq = solve_social_optimum(net), solve_wardrop(net)
        worst = max(worst, (opt.aggregate_delay - eq.aggregate_delay) / eq.aggregate_delay)
    summary(f"pigou optimum {so.flow.round(8).tolist()} aggregate {so.aggregate_delay:.8f}; "
            f"max relative (optimum - equilibrium) over 100 networks {worst:.2e}")
    assert np.max(np.abs(so.flow - 0.5)) <= 1e-6
    assert abs(so.aggregate_delay - 0.75) <= 1e-6
    assert worst <= 1e-9
