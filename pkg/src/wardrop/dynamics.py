"""Learning dynamics on a network: replicator and BNN ODEs, the stochastic
replicator SDE with edge-correlated noise, and exponential learning on scores.

All simulators advance a batch of states of shape ``(B, n_paths)``; a single
1-D initial flow gives a single trajectory.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleLoadError, NotInteriorError
from .latency import NoiseSpec, adjoint_potential, path_covariance, relative_entropy
from .network import Network, projective_distance

GENERATOR_ID = "numpy.random.Philox-4x64/SeedSequence(seed, spawn_key=(replicate,))"
NEG_TOL = 1e-12
NOISE_CHUNK = 512


@dataclass
class SimConfig:
    rates: object = 1.0          # scalar or per-user learning rates
    dt: float = 1e-2
    horizon: float = 10.0
    scheme: str = "rk4"          # rk4 | euler (ODE); the SDE always uses Euler-Maruyama
    seed: int = 0
    floor: float = 1e-12
    q: np.ndarray | None = None  # reference flow for diagnostics
    stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if not (0 < self.floor <= 1e-6):
            raise ValueError("floor must lie in (0, 1e-6]")
        if self.scheme not in ("rk4", "euler", "euler-maruyama"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if int(self.stride) < 1:
            raise ValueError("stride must be >= 1")
        if np.any(np.asarray(self.rates, dtype=float) <= 0):
            raise ValueError("learning rates must be positive")

    @property
    def n_steps(self):
        return int(math.ceil(self.horizon / self.dt - 1e-9)) if self.horizon > 0 else 0

    def user_rates(self, net):
        return np.broadcast_to(np.asarray(self.rates, dtype=float), (net.n_users,)).copy()

    def mean_rate(self, net):
        """Rate-weighted mean learning rate sum_i rho_i lambda_i / rho."""
        return float(net.rates @ self.user_rates(net) / net.total_rate)


@dataclass
class Trajectory:
    times: np.ndarray
    flows: np.ndarray                  # (S, n) or (S, B, n)
    diagnostics: dict                  # name -> (S,) or (S, B)
    metadata: dict
    status: str = "ok"                 # ok | infeasible
    message: str = ""
    max_uptick: dict = field(default_factory=dict)   # largest per-step increase of H_q, phi

    @property
    def final(self):
        return self.flows[-1]

    @property
    def completed(self):
        return self.status == "ok"


# ---------------------------------------------------------------------------
# vector fields


def _omega(net, x):
    return net.costs.phi(net.loads(x)) @ net.P


def _avg_delay(net, x, omega):
    return ((x * omega) @ net.M.T / net.rates)[..., net.owner]


def replicator_rhs(net: Network, x, rates=1.0):
    """lambda_i x_a (mean delay of user i - delay of path a)."""
    x = np.asarray(x, dtype=float)
    lam = np.broadcast_to(np.asarray(rates, dtype=float), (net.n_users,))[net.owner]
    omega = _omega(net, x)
    return lam * x * (_avg_delay(net, x, omega) - omega)


def excess_delays(net: Network, x):
    x = np.asarray(x, dtype=float)
    omega = _omega(net, x)
    return np.maximum(_avg_delay(net, x, omega) - omega, 0.0)


def bnn_rhs(net: Network, x):
    """Mass-preserving excess-delay dynamics rho_i psi_a - x_a sum_b psi_b."""
    x = np.asarray(x, dtype=float)
    psi = excess_delays(net, x)
    return net.path_rates * psi - x * (psi @ net.M.T)[..., net.owner]


def _project(net, x, floor=0.0):
    """Clamp tiny negatives (or everything below floor*rho) and restore user masses."""
    if floor > 0:
        x = np.maximum(x, floor * net.path_rates)
    else:
        x = np.where(x < 0, 0.0, x)
    sums = (x @ net.M.T)[..., net.owner]
    return x * (net.path_rates / sums)


# ---------------------------------------------------------------------------
# diagnostics


def _diagnostics(net, X, rates, q, q_interior):
    y = net.loads(X)
    phi = net.costs.phi(y)
    omega = phi @ net.P
    best = np.stack([omega[..., s].min(axis=-1) for s in net.user_slices], axis=-1)[..., net.owner]
    total = np.sum(X * omega, axis=-1)
    out = {
        "phi": np.sum(net.costs.integral(y, check=False), axis=-1),
        "gap": np.sum(X * (omega - best), axis=-1) / np.where(total > 0, total, 1.0),
    }
    if q is None:
        nan = np.full(X.shape[:-1], np.nan)
        out.update(H_q=nan, L_q=nan, theta=nan)
    else:
        out["H_q"] = relative_entropy(net, q, X, rates)
        out["L_q"] = np.sum((y - net.loads(q)) * phi, axis=-1)
        out["theta"] = projective_distance(q, X) if q_interior else np.full(X.shape[:-1], np.nan)
    return out


DIAGNOSTICS = ("H_q", "phi", "L_q", "theta", "gap")


class _Recorder:
    def __init__(self, net, cfg, single, kind, extra_meta):
        self.net, self.cfg, self.single = net, cfg, single
        self.rates = cfg.user_rates(net)
        self.q = None if cfg.q is None else np.asarray(cfg.q, dtype=float)
        self.q_interior = self.q is not None and bool(np.all(self.q > 0))
        self.times, self.flows = [], []
        self.diag = {k: [] for k in DIAGNOSTICS}
        self.prev = None
        self.uptick = {"H_q": 0.0, "phi": 0.0}
        self.meta = {
            "kind": kind, "scheme": cfg.scheme, "dt": cfg.dt, "horizon": cfg.horizon,
            "seed": cfg.seed, "rates": self.rates.tolist(), "floor": cfg.floor, "stride": cfg.stride,
        }
        self.meta.update(extra_meta)

    def observe(self, k, X, track_monotone=False):
        d = None
        if track_monotone:
            d = _diagnostics(self.net, X, self.rates, self.q, self.q_interior)
            if self.prev is not None:
                for name in self.uptick:
                    with np.errstate(invalid="ignore"):
                        inc = np.nanmax(d[name] - self.prev[name]) if np.any(np.isfinite(d[name])) else 0.0
                    self.uptick[name] = max(self.uptick[name], float(inc))
            self.prev = d
        if k % self.cfg.stride == 0 or k == self.cfg.n_steps:
            if d is None:
                d = _diagnostics(self.net, X, self.rates, self.q, self.q_interior)
            self.times.append(k * self.cfg.dt)
            self.flows.append(X[0].copy() if self.single else X.copy())
            for name in DIAGNOSTICS:
                v = np.asarray(d[name])
                self.diag[name].append(v[0] if self.single else v.copy())

    def finish(self, status="ok", message=""):
        diag = {k: np.array(v) for k, v in self.diag.items()}
        return Trajectory(np.array(self.times), np.array(self.flows), diag, self.meta, status, message,
                          dict(self.uptick))


def _as_batch(net, x0):
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    X = np.atleast_2d(x0).copy()
    net.validate_flow(X)
    net.costs.check(net.loads(X))
    return X, single


# ---------------------------------------------------------------------------
# deterministic integration


def integrate_ode(net: Network, x0, cfg: SimConfig, rhs="replicator", track_monotone=True) -> Trajectory:
    """Fixed-step integration of the replicator or BNN field.

    A step that pushes a coordinate below -1e-12 is redone as two half steps;
    smaller negatives are clamped to zero and each user's mass restored.
    Zero coordinates stay exactly zero under the replicator field.
    """
    if rhs == "replicator":
        lam = cfg.user_rates(net)

        def field_(x):
            return replicator_rhs(net, x, lam)
    elif rhs == "bnn":
        def field_(x):
            return bnn_rhs(net, x)
    else:
        raise ValueError(f"unknown vector field {rhs!r}")
    scheme = "rk4" if cfg.scheme == "euler-maruyama" else cfg.scheme

    def one(x, h):
        if scheme == "euler":
            return x + h * field_(x)
        k1 = field_(x)
        k2 = field_(x + 0.5 * h * k1)
        k3 = field_(x + 0.5 * h * k2)
        k4 = field_(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def advance(x, h, depth=0):
        try:
            new = one(x, h)
            bad = np.any(new < -NEG_TOL)
        except InfeasibleLoadError:
            if depth >= 30:
                raise
            bad = True
        if bad:
            if depth >= 30:
                raise FloatingPointError("step halving failed to keep the flow nonnegative")
            return advance(advance(x, h / 2, depth + 1), h / 2, depth + 1)
        return _project(net, new)

    X, single = _as_batch(net, x0)
    rec = _Recorder(net, cfg, single, f"ode-{rhs}", {"vector_field": rhs, "scheme": scheme})
    rec.observe(0, X, track_monotone)
    for k in range(1, cfg.n_steps + 1):
        try:
            X = advance(X, cfg.dt)
        except (InfeasibleLoadError, FloatingPointError) as exc:
            return rec.finish("infeasible", str(exc))
        rec.observe(k, X, track_monotone)
    return rec.finish()


# ---------------------------------------------------------------------------
# noise


def replicate_generator(seed, k):
    """Independent stream for replicate ``k`` of a batch under master ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(k),))))


def noise_increments(net: Network, noise: NoiseSpec, dt, rng, size=None):
    """Path noise dU_a = sum_r P_ra sigma_r dW_r with dW_r ~ N(0, dt) per edge."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    shape = (net.n_edges,) if size is None else tuple(np.atleast_1d(size)) + (net.n_edges,)
    dW = rng.standard_normal(shape) * math.sqrt(dt)
    return (dW * noise.sigma) @ net.P


class _NoiseStream:
    """Per-replicate Gaussian edge increments, drawn in fixed-size chunks so a
    replicate's noise depends only on (seed, replicate index)."""

    def __init__(self, net, noise, dt, seed, replicates, first=0, chunk=NOISE_CHUNK):
        self.zero = not np.any(noise.sigma > 0)
        self.scale = noise.sigma * math.sqrt(dt)
        self.P = net.P
        self.E = net.n_edges
        self.chunk = chunk
        self.gens = [] if self.zero else [replicate_generator(seed, first + k) for k in range(replicates)]
        self.B = replicates
        self.buf, self.pos = None, chunk

    def next(self):
        if self.zero:
            return np.zeros((self.B, self.P.shape[1]))
        if self.pos == self.chunk:
            self.buf = np.stack([g.standard_normal((self.chunk, self.E)) for g in self.gens], axis=1)
            self.pos = 0
        dW = self.buf[self.pos]
        self.pos += 1
        return (dW * self.scale) @ self.P


def _check_step_size(net, cfg, noise):
    var = np.diag(path_covariance(net, noise))
    level = cfg.mean_rate(net) * (var.max() if var.size else 0.0) * cfg.dt
    if level > 0.01:
        warnings.warn(f"step size may be too coarse for the noise level (lambda*sigma^2*dt = {level:.3g})",
                      stacklevel=3)


def _batch_start(net, x0, replicates):
    X, single = _as_batch(net, x0)
    if replicates is not None:
        if X.shape[0] == 1:
            X = np.repeat(X, replicates, axis=0)
        elif X.shape[0] != replicates:
            raise ValueError("initial flows do not match the replicate count")
        single = False
    return X, single


def sde_states(net: Network, x0, cfg: SimConfig, noise: NoiseSpec, replicates=None, first_replicate=0):
    """Generator of (step, X) for the stochastic replicator SDE (Euler-Maruyama).

    Yields the initial batch first; raises InfeasibleLoadError on overload.
    """
    X, _ = _batch_start(net, x0, replicates)
    lam = cfg.user_rates(net)[net.owner]
    stream = _NoiseStream(net, noise, cfg.dt, cfg.seed, X.shape[0], first_replicate)
    floor = cfg.floor
    yield 0, X
    for k in range(1, cfg.n_steps + 1):
        omega = _omega(net, X)
        dU = stream.next()
        mean_dU = ((X * dU) @ net.M.T / net.rates)[:, net.owner]
        X = X + lam * X * ((_avg_delay(net, X, omega) - omega) * cfg.dt + dU - mean_dU)
        X = _project(net, X, floor)
        yield k, X


def score_states(net: Network, x0, cfg: SimConfig, noise: NoiseSpec, replicates=None, first_replicate=0):
    """Generator of (step, X) for exponential learning: scores accumulate minus
    delays plus path noise, flows are the rate-scaled Boltzmann map of scores."""
    X, _ = _batch_start(net, x0, replicates)
    if np.any(X <= 0):
        raise NotInteriorError("exponential learning needs a strictly interior initial flow")
    lam = cfg.user_rates(net)[net.owner]
    rho = net.path_rates
    V = np.log(X / rho) / lam
    stream = _NoiseStream(net, noise, cfg.dt, cfg.seed, X.shape[0], first_replicate)
    yield 0, X
    for k in range(1, cfg.n_steps + 1):
        omega = _omega(net, X)
        V = V - omega * cfg.dt + stream.next()
        X = boltzmann(net, V, lam)
        yield k, X


def boltzmann(net: Network, V, lam):
    """x_a = rho_i exp(lambda_i V_a) / sum_b exp(lambda_i V_b), max-shifted per user."""
    Z = lam * V
    out = np.empty_like(Z)
    for i, s in enumerate(net.user_slices):
        z = Z[..., s]
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        out[..., s] = net.rates[i] * e / e.sum(axis=-1, keepdims=True)
    return out


def _run(states, net, cfg, single, kind, meta, track_monotone=False):
    rec = _Recorder(net, cfg, single, kind, meta)
    try:
        for k, X in states:
            rec.observe(k, X, track_monotone)
    except InfeasibleLoadError as exc:
        return rec.finish("infeasible", str(exc))
    return rec.finish()


def _noise_meta(noise, replicates, first):
    return {"noise_sigma": noise.sigma.tolist(), "generator": GENERATOR_ID,
            "replicates": replicates, "first_replicate": first}


def simulate_sde(net: Network, x0, cfg: SimConfig, noise: NoiseSpec, replicates=None,
                 first_replicate=0) -> Trajectory:
    """Stochastic replicator dynamics; each step is floored at floor*rho_i and
    renormalised per user. ``replicates`` runs a batch of independent copies."""
    _check_step_size(net, cfg, noise)
    X, single = _batch_start(net, x0, replicates)
    states = sde_states(net, X, cfg, noise, None, first_replicate)
    meta = _noise_meta(noise, X.shape[0], first_replicate)
    meta["scheme"] = "euler-maruyama"
    return _run(states, net, cfg, single, "sde-replicator", meta)


def simulate_exponential_learning(net: Network, x0, cfg: SimConfig, noise: NoiseSpec, replicates=None,
                                  first_replicate=0) -> Trajectory:
    _check_step_size(net, cfg, noise)
    X, single = _batch_start(net, x0, replicates)
    states = score_states(net, X, cfg, noise, None, first_replicate)
    meta = _noise_meta(noise, X.shape[0], first_replicate)
    meta["scheme"] = "euler-maruyama"
    return _run(states, net, cfg, single, "sde-exponential", meta)


# ---------------------------------------------------------------------------
# generator of the entropy


def entropy_generator(net: Network, q, x, rates, noise: NoiseSpec):
    """Infinitesimal drift of the rate-adjusted relative entropy under the SDE."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any((q > 0) & (x <= 0)):
        raise ValueError("x must be positive on the support of q")
    lam = np.broadcast_to(np.asarray(rates, dtype=float), (net.n_users,))
    S = path_covariance(net, noise)
    total = -adjoint_potential(net, q, x)
    for i, s in enumerate(net.user_slices):
        Si = S[s, s]
        z = x[..., s] - q[s]
        quad = np.einsum("...b,bc,...c->...", z, Si, z)
        const = net.rates[i] * np.diag(Si) @ q[s] - q[s] @ Si @ q[s]
        total = total + 0.5 * lam[i] / net.rates[i] * (quad + const)
    return total
