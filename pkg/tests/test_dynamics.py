import numpy as np
import pytest

from conftest import two_links
from oracles import ito_generator, replicator_ode_oracle
from wardrop.dynamics import (SimConfig, bnn_rhs, entropy_generator, integrate_ode, noise_increments,
                              replicate_generator, replicator_rhs, simulate_exponential_learning,
                              simulate_sde)
from wardrop.equilibria import solve_wardrop
from wardrop.latency import LatencySpec, NoiseSpec, path_covariance
from wardrop.network import UserSpec, build_network


def test_replicator_rest_point_at_braess_disparity(braess):
    np.testing.assert_array_equal(replicator_rhs(braess, [3, 3, 0]), 0.0)
    np.testing.assert_allclose(replicator_rhs(braess, [2, 2, 2]), 0.0, atol=1e-12)


def test_bnn_examples(braess):
    np.testing.assert_allclose(bnn_rhs(braess, [2, 2, 2]), 0.0, atol=1e-12)
    np.testing.assert_allclose(bnn_rhs(braess, [3, 3, 0]), [-39, -39, 78])


def test_rhs_preserves_mass(fig1b):
    rng = np.random.default_rng(0)
    X = fig1b.random_flow(rng, batch=20)
    for v in (replicator_rhs(fig1b, X, [0.5, 1.0, 2.0]), bnn_rhs(fig1b, X)):
        np.testing.assert_allclose(v @ fig1b.M.T, 0.0, atol=1e-12)


def test_faces_are_invariant(braess):
    traj = integrate_ode(braess, [3.0, 3.0, 0.0], SimConfig(dt=0.01, horizon=5.0))
    assert np.all(traj.flows[:, 2] == 0.0)
    traj = integrate_ode(braess, [6.0, 0.0, 0.0], SimConfig(dt=0.01, horizon=5.0))
    assert np.all(traj.flows[:, 1:] == 0.0)


def test_braess_long_run_reaches_equilibrium(braess):
    cfg = SimConfig(rates=1.0, dt=0.01, horizon=200.0, q=np.array([2.0, 2.0, 2.0]), stride=1000)
    traj = integrate_ode(braess, [1.0, 2.0, 3.0], cfg)
    np.testing.assert_allclose(traj.final, [2, 2, 2], atol=1e-4)
    assert traj.max_uptick["H_q"] <= 1e-9
    assert traj.max_uptick["phi"] <= 1e-9
    assert traj.diagnostics["gap"][-1] < 1e-6


def test_ode_against_adaptive_oracle(fig1a):
    mu = np.array([e.latency.capacity for e in fig1a.edges])
    x0 = np.array([0.2, 0.8, 0.7, 0.3])
    rates = [0.5, 2.0]
    lam = np.array(rates)[fig1a.owner]
    sol = replicator_ode_oracle(lambda y: 1.0 / (mu - y), fig1a.P, fig1a.user_slices, fig1a.rates,
                                x0, 5.0, t_eval=[5.0])
    # the oracle has unit rates; per-user rates only rescale the field
    traj = integrate_ode(fig1a, x0, SimConfig(rates=1.0, dt=0.01, horizon=5.0, stride=500))
    np.testing.assert_allclose(traj.final, sol.y[:, -1], atol=1e-9)
    np.testing.assert_allclose(replicator_rhs(fig1a, x0, rates), lam * replicator_rhs(fig1a, x0, 1.0))


def test_bnn_converges(braess):
    traj = integrate_ode(braess, [3.0, 3.0, 0.0], SimConfig(dt=0.002, horizon=5.0, stride=2500), rhs="bnn")
    np.testing.assert_allclose(traj.final, [2, 2, 2], atol=1e-3)


def test_euler_scheme_and_stride(braess):
    cfg = SimConfig(dt=0.01, horizon=1.0, scheme="euler", stride=10)
    traj = integrate_ode(braess, [1.0, 2.0, 3.0], cfg)
    assert len(traj.times) == 11 and traj.times[-1] == pytest.approx(1.0)
    assert traj.metadata["scheme"] == "euler"


def test_zero_horizon_single_row(braess):
    traj = integrate_ode(braess, [1.0, 2.0, 3.0], SimConfig(horizon=0.0))
    assert traj.flows.shape == (1, 3)


def test_sde_without_noise_is_euler_ode(braess):
    cfg = SimConfig(dt=0.001, horizon=2.0, scheme="euler", stride=100)
    ode = integrate_ode(braess, [1.0, 2.0, 3.0], cfg)
    sde = simulate_sde(braess, [1.0, 2.0, 3.0], cfg, NoiseSpec.zeros(braess))
    np.testing.assert_allclose(sde.flows, ode.flows, atol=1e-9)


def test_exponential_learning_without_noise_tracks_ode(braess):
    dt = 0.001
    cfg = SimConfig(dt=dt, horizon=10.0, stride=100)
    ode = integrate_ode(braess, [1.0, 2.0, 3.0], cfg)
    exp = simulate_exponential_learning(braess, [1.0, 2.0, 3.0], cfg, NoiseSpec.zeros(braess))
    assert np.max(np.abs(exp.flows - ode.flows)) <= 10 * dt


def test_exponential_learning_constant_equal_latencies():
    net = two_links(LatencySpec.constant(1.0), LatencySpec.constant(1.0))
    traj = simulate_exponential_learning(net, [0.5, 0.5], SimConfig(dt=0.01, horizon=5.0), NoiseSpec.zeros(net))
    np.testing.assert_allclose(traj.flows, 0.5, atol=1e-15)


def test_noise_increment_covariance(fig1b):
    noise = NoiseSpec(np.array([0.3, 0.5, 0.7, 0.4, 0.6]))
    dt = 0.1
    rng = np.random.default_rng(5)
    dU = noise_increments(fig1b, noise, dt, rng, size=100_000)
    S = path_covariance(fig1b, noise) * dt
    np.testing.assert_allclose(dU.mean(axis=0), 0.0, atol=4 * np.sqrt(S.diagonal().max() / 100_000))
    emp = np.cov(dU, rowvar=False)
    n = len(dU)
    se = np.sqrt((S ** 2 + np.outer(S.diagonal(), S.diagonal())) / n)
    assert np.all(np.abs(emp - S) <= 4 * se)


def test_replicates_are_reproducible_and_independent_of_batch(parallel2):
    net, noise = parallel2.network, parallel2.noise
    cfg = SimConfig(rates=0.1, dt=0.01, horizon=10.0, seed=42, stride=100)
    a = simulate_sde(net, [0.5, 0.5], cfg, noise, replicates=6)
    b = simulate_sde(net, [0.5, 0.5], cfg, noise, replicates=6)
    np.testing.assert_array_equal(a.flows, b.flows)
    one = simulate_sde(net, [0.5, 0.5], cfg, noise, replicates=1, first_replicate=4)
    np.testing.assert_array_equal(one.flows[:, 0], a.flows[:, 4])
    other = simulate_sde(net, [0.5, 0.5], SimConfig(rates=0.1, dt=0.01, horizon=10.0, seed=43, stride=100),
                         noise, replicates=6)
    assert not np.array_equal(other.flows, a.flows)
    assert a.metadata["generator"].startswith("numpy.random.Philox")


def test_replicate_streams_differ():
    a = replicate_generator(0, 0).standard_normal(4)
    b = replicate_generator(0, 1).standard_normal(4)
    assert not np.allclose(a, b)


def test_sde_stays_in_polytope(fig1b):
    noise = NoiseSpec.uniform(fig1b, 0.3)
    traj = simulate_sde(fig1b, fig1b.barycenter(), SimConfig(dt=0.01, horizon=20.0, stride=10), noise,
                        replicates=20)
    assert np.all(traj.flows > 0)
    np.testing.assert_allclose(traj.flows @ fig1b.M.T, 1.0, atol=1e-12)


def test_coarse_step_warns(parallel2):
    with pytest.warns(UserWarning, match="step size"):
        simulate_sde(parallel2.network, [0.5, 0.5], SimConfig(dt=1.0, horizon=1.0),
                     NoiseSpec.uniform(parallel2.network, 1.0))


def test_overload_reports_infeasible():
    edges = [("a", "s", "t", LatencySpec.mm1(1.05)), ("b", "s", "t", LatencySpec.mm1(1.05))]
    net = build_network("st", edges, [UserSpec("1", "s", "t", 2.0, "all")])
    traj = simulate_sde(net, [1.0, 1.0], SimConfig(dt=0.001, horizon=10.0, seed=1), NoiseSpec.uniform(net, 1.0),
                        replicates=4)
    assert traj.status == "infeasible" and "capacity" in traj.message.lower()


@pytest.mark.parametrize("simulate", [simulate_sde, simulate_exponential_learning])
def test_strict_equilibrium_attracts_almost_all_runs(parallel2, simulate):
    net, noise = parallel2.network, parallel2.noise
    cfg = SimConfig(rates=0.1, dt=0.01, horizon=500.0, seed=7, stride=50_000)
    traj = simulate(net, [0.5, 0.5], cfg, noise, replicates=200)
    assert np.mean(traj.final[:, 0] > 0.999) >= 0.95


def test_entropy_generator_disjoint_pair(disjoint_pair):
    net, noise = disjoint_pair
    q = np.array([0.5, 0.5])
    assert entropy_generator(net, q, q, 1.0, noise) == pytest.approx(0.25, abs=1e-15)


def test_entropy_generator_against_ito_formula(fig1b):
    rng = np.random.default_rng(12)
    noise = NoiseSpec(np.array([0.3, 0.5, 0.7, 0.4, 0.6]))
    lam_u = np.array([0.5, 1.0, 2.0])
    lam = lam_u[fig1b.owner]
    mu = np.array([e.latency.capacity for e in fig1b.edges])
    P = fig1b.P

    for _ in range(5):
        q = fig1b.random_flow(rng)
        x = fig1b.random_flow(rng)

        def drift(x):
            w = (1.0 / (mu - P @ x)) @ P
            out = np.empty_like(x)
            for i, s in enumerate(fig1b.user_slices):
                out[s] = lam[s] * x[s] * (x[s] @ w[s] / fig1b.rates[i] - w[s])
            return out

        def diffusion(x):
            G = np.zeros((len(x), P.shape[0]))
            for i, s in enumerate(fig1b.user_slices):
                mean_col = P[:, s] @ x[s] / fig1b.rates[i]
                for a in range(s.start, s.stop):
                    G[a] = lam[a] * x[a] * (P[:, a] - mean_col) * noise.sigma
            return G

        ref = ito_generator(lambda x: -q / (lam * x), lambda x: np.diag(q / (lam * x * x)), drift, diffusion, x)
        assert entropy_generator(fig1b, q, x, lam_u, noise) == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_entropy_generator_negative_near_equilibrium_in_strict_case(parallel2):
    net, noise = parallel2.network, parallel2.noise
    q = solve_wardrop(net).flow
    x = np.array([0.9, 0.1])
    assert entropy_generator(net, q, x, 0.1, noise) < 0
