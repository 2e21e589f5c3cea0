"""Invariants checked on generated networks and flows."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from wardrop.dynamics import bnn_rhs, replicator_rhs
from wardrop.equilibria import solve_wardrop, wardrop_gap, wardrop_set_dimension
from wardrop.generators import random_network
from wardrop.io import network_config, parse_config
from wardrop.latency import (adjoint_potential, path_delays, potential_gradient, relative_entropy,
                             rosenthal_potential)
from wardrop.network import boundary_point, project_simplex, projective_distance, redundancy_lower_bound

seeds = st.integers(min_value=0, max_value=2**32 - 1)
FAST = settings(max_examples=60, deadline=None)
SLOW = settings(max_examples=25, deadline=None)


def _setup(seed, batch=None):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    return net, rng, net.random_flow(rng, batch=batch)


@FAST
@given(seeds)
def test_loads_are_affine_in_flow(seed):
    net, rng, x = _setup(seed)
    z = net.random_flow(rng)
    t = rng.uniform()
    mid = net.loads(t * x + (1 - t) * z)
    np.testing.assert_allclose(mid, t * net.loads(x) + (1 - t) * net.loads(z), atol=1e-12)
    assert np.all(net.loads(x) >= net.background - 1e-15)


@FAST
@given(seeds)
def test_potential_convex_and_gradient_is_delay(seed):
    net, rng, x = _setup(seed)
    z = net.random_flow(rng)
    mid = rosenthal_potential(net, 0.5 * (x + z))
    assert mid <= 0.5 * (rosenthal_potential(net, x) + rosenthal_potential(net, z)) + 1e-10
    np.testing.assert_array_equal(potential_gradient(net, x), path_delays(net, x).path)


@FAST
@given(seeds)
def test_entropy_nonnegative_and_zero_at_reference(seed):
    net, rng, q = _setup(seed)
    x = net.random_flow(rng, batch=10)
    assert np.all(relative_entropy(net, q, x) >= -1e-14)
    assert relative_entropy(net, q, q) == 0.0


@FAST
@given(seeds)
def test_projective_distance_in_unit_interval(seed):
    net, rng, q = _setup(seed)
    x = net.random_flow(rng, batch=20)
    theta = projective_distance(q, x)
    assert np.all((theta >= 0) & (theta <= 1 + 1e-12))
    b = boundary_point(q, x)
    assert np.all(b.min(axis=1) <= 1e-12) and np.all(b >= -1e-12)
    # x sits on the segment from q to its boundary point at fraction theta
    np.testing.assert_allclose(q + theta[:, None] * (b - q), x, atol=1e-9)


@FAST
@given(seeds)
def test_dynamics_fields_preserve_mass_and_decrease_potential(seed):
    net, rng, x = _setup(seed)
    omega = path_delays(net, x).path
    for v in (replicator_rhs(net, x), bnn_rhs(net, x)):
        np.testing.assert_allclose(v @ net.M.T, 0.0, atol=1e-10)
        # positive correlation: the potential never increases along either field
        assert v @ omega <= 1e-10


@SLOW
@given(seeds)
def test_solved_equilibria_satisfy_structure_bounds(seed):
    net, rng, x = _setup(seed)
    rep = solve_wardrop(net, tol=1e-10)
    assert rep.converged
    absolute, _ = wardrop_gap(net, x)
    assert absolute >= -1e-12
    red = net.redundancy_info.redundancy
    assert red >= redundancy_lower_bound(net)
    assert wardrop_set_dimension(net, rep.flow) <= red
    # the adjoint potential is nonnegative around a Wardrop flow
    assert np.all(adjoint_potential(net, rep.flow, net.random_flow(rng, batch=50)) >= -1e-8)


@FAST
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(0.1, 5))
def test_project_simplex_lands_on_simplex(values, mass):
    p = project_simplex(np.array(values), mass)
    assert np.all(p >= 0)
    assert abs(p.sum() - mass) <= 1e-9 * max(1.0, mass)


@SLOW
@given(seeds)
def test_config_round_trip(seed):
    net, _, _ = _setup(seed)
    assert parse_config(network_config(net)).network == net
