"""Edge latency families and the scalar functionals of a flow.

Every functional here is vectorised over leading axes: a flow is an array whose
last axis runs over the network's paths (users contiguous), so ``x`` may be a
single flow of shape ``(n_paths,)`` or a batch ``(..., n_paths)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleLoadError, NetworkError

# loads closer than this to an M/M/1 capacity are rejected, never clamped
MM1_GUARD = 1e-9

FAMILIES = ("affine", "constant", "monomial", "mm1")


@dataclass(frozen=True)
class LatencySpec:
    """Delay function of one edge.

    ``affine``: ``slope*y + intercept``; ``constant``: ``intercept``;
    ``monomial``: ``intercept + slope*y**exponent``; ``mm1``: ``1/(capacity - y)``.
    """

    family: str
    slope: float = 0.0
    intercept: float = 0.0
    exponent: float = 1.0
    capacity: float = math.inf

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise NetworkError(f"unknown latency family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "affine":
            if not self.slope > 0:
                raise NetworkError("affine latency needs slope > 0 (use 'constant' for flat delays)")
            if self.intercept < 0:
                raise NetworkError("affine latency needs intercept >= 0")
        elif self.family == "constant":
            if self.intercept < 0:
                raise NetworkError("constant latency must be >= 0")
        elif self.family == "monomial":
            if not self.slope > 0 or self.exponent < 1 or self.intercept < 0:
                raise NetworkError("monomial latency needs coefficient > 0, exponent >= 1, intercept >= 0")
        elif self.family == "mm1":
            if not (self.capacity > 0 and math.isfinite(self.capacity)):
                raise NetworkError("mm1 latency needs a finite capacity > 0")

    @classmethod
    def affine(cls, slope, intercept=0.0):
        return cls("affine", slope=float(slope), intercept=float(intercept))

    @classmethod
    def constant(cls, value):
        return cls("constant", intercept=float(value))

    @classmethod
    def monomial(cls, coefficient, exponent, intercept=0.0):
        return cls("monomial", slope=float(coefficient), exponent=float(exponent),
                   intercept=float(intercept))

    @classmethod
    def mm1(cls, capacity):
        return cls("mm1", capacity=float(capacity))

    def to_dict(self):
        if self.family == "affine":
            return {"type": "affine", "a": self.slope, "b": self.intercept}
        if self.family == "constant":
            return {"type": "constant", "c": self.intercept}
        if self.family == "monomial":
            return {"type": "monomial", "coefficient": self.slope, "exponent": self.exponent,
                    "b": self.intercept}
        return {"type": "mm1", "mu": self.capacity}

    # scalar conveniences; the vectorised path goes through EdgeCosts
    def __call__(self, y):
        return float(EdgeCosts([self]).phi(np.array([y]))[0])

    def derivative(self, y):
        return float(EdgeCosts([self]).dphi(np.array([y]))[0])


class EdgeCosts:
    """Vectorised evaluation of a list of edge latencies.

    Power-law families share the form ``b + a*y**k``; M/M/1 edges are masked.
    With ``marginal=True`` every method refers to the marginal latency
    ``phi(y) + y*phi'(y)`` instead, whose antiderivative is ``y*phi(y)``.
    """

    def __init__(self, specs, names=None, marginal=False):
        self.specs = tuple(specs)
        self.names = tuple(names) if names is not None else tuple(str(i) for i in range(len(self.specs)))
        self.marginal = marginal
        self.is_mm1 = np.array([s.family == "mm1" for s in self.specs], dtype=bool)
        self.a = np.array([s.slope for s in self.specs], dtype=float)
        self.b = np.array([s.intercept for s in self.specs], dtype=float)
        self.k = np.array([s.exponent for s in self.specs], dtype=float)
        self.mu = np.array([s.capacity if s.family == "mm1" else np.inf for s in self.specs])
        self._any_mm1 = bool(self.is_mm1.any())

    def with_marginal(self, marginal=True):
        return EdgeCosts(self.specs, self.names, marginal=marginal)

    # -- feasibility -------------------------------------------------------
    def feasible(self, y):
        """Boolean mask over leading axes: all M/M/1 loads below capacity - guard."""
        y = np.asarray(y, dtype=float)
        if not self._any_mm1:
            return np.ones(y.shape[:-1], dtype=bool)
        return np.all(~self.is_mm1 | (y < self.mu - MM1_GUARD), axis=-1)

    def check(self, y):
        if not self._any_mm1:
            return
        bad = self.is_mm1 & (y >= self.mu - MM1_GUARD)
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            r = idx[-1]
            raise InfeasibleLoadError(self.names[r], float(y[tuple(idx)]), float(self.mu[r]))

    # -- raw families ------------------------------------------------------
    def _power(self, y):
        return self.b + self.a * np.power(y, self.k)

    def _dpower(self, y):
        # a*k*y**(k-1); k == 1 gives a exactly (avoid 0**0 surprises)
        return self.a * self.k * np.power(y, self.k - 1.0)

    def _phi(self, y):
        if not self._any_mm1:
            return self._power(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.is_mm1, 1.0 / (self.mu - y), self._power(y))

    def _dphi(self, y):
        if not self._any_mm1:
            return self._dpower(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.is_mm1, 1.0 / (self.mu - y) ** 2, self._dpower(y))

    def _integral(self, y):
        power = self.b * y + self.a * np.power(y, self.k + 1.0) / (self.k + 1.0)
        if not self._any_mm1:
            return power
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.is_mm1, -np.log1p(-y / self.mu), power)

    # -- public, honouring the marginal flag --------------------------------
    def phi(self, y, check=True):
        y = np.asarray(y, dtype=float)
        if check:
            self.check(y)
        if self.marginal:
            return self._phi(y) + y * self._dphi(y)
        return self._phi(y)

    def dphi(self, y, check=True):
        y = np.asarray(y, dtype=float)
        if check:
            self.check(y)
        if self.marginal:
            # d/dy [phi + y phi'] = 2 phi' + y phi''
            return 2.0 * self._dphi(y) + y * self._ddphi(y)
        return self._dphi(y)

    def _ddphi(self, y):
        pw = self.a * self.k * (self.k - 1.0) * np.power(y, np.maximum(self.k - 2.0, 0.0))
        pw = np.where(self.k == 1.0, 0.0, pw)
        if not self._any_mm1:
            return pw
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.is_mm1, 2.0 / (self.mu - y) ** 3, pw)

    def integral(self, y, check=True):
        """Antiderivative from 0 to ``y`` per edge."""
        y = np.asarray(y, dtype=float)
        if check:
            self.check(y)
        if self.marginal:
            return y * self._phi(y)
        return self._integral(y)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-edge diffusion intensities (delay units per sqrt(time))."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 1 or np.any(~np.isfinite(s)) or np.any(s < 0):
            raise NetworkError("noise intensities must be a finite, nonnegative vector over edges")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @classmethod
    def zeros(cls, net):
        return cls(np.zeros(net.n_edges))

    @classmethod
    def uniform(cls, net, sigma):
        return cls(np.full(net.n_edges, float(sigma)))

    @classmethod
    def from_mapping(cls, net, mapping, default=0.0):
        sigma = np.full(net.n_edges, float(default))
        for name, value in mapping.items():
            if name not in net.edge_index:
                raise NetworkError(f"noise given for unknown edge {name!r}")
            sigma[net.edge_index[name]] = float(value)
        return cls(sigma)

    @property
    def total_variance(self):
        """Aggregate sigma^2 = sum_r sigma_r^2."""
        return float(np.sum(self.sigma ** 2))

    def __eq__(self, other):
        return isinstance(other, NoiseSpec) and np.array_equal(self.sigma, other.sigma)

    def __hash__(self):
        return hash(self.sigma.tobytes())


def path_covariance(net, noise):
    """Matrix of sigma^2_{ab} = sum_r P_ra P_rb sigma_r^2 over all paths."""
    P = net.P
    return P.T @ (noise.sigma[:, None] ** 2 * P)


# ---------------------------------------------------------------------------
# flow functionals


@dataclass(frozen=True)
class DelayProfile:
    path: np.ndarray      # (..., n_paths) delay along each path
    average: np.ndarray   # (..., n_users) rate-weighted mean delay per user
    worst: np.ndarray     # (..., n_users) max delay over supported paths
    loads: np.ndarray     # (..., n_edges) total edge loads incl. background


def _costs(net, marginal):
    return net.costs.with_marginal() if marginal else net.costs


def path_delays(net, x, marginal=False):
    """Path, average and worst delays from a single load evaluation."""
    x = np.asarray(x, dtype=float)
    y = net.loads(x)
    phi = _costs(net, marginal).phi(y)
    omega = phi @ net.P
    average = (x * omega) @ net.M.T / net.rates
    worst = np.stack(
        [np.max(np.where(x[..., s] > 0, omega[..., s], -np.inf), axis=-1) for s in net.user_slices],
        axis=-1,
    ) if net.n_users else np.zeros(x.shape[:-1] + (0,))
    return DelayProfile(omega, average, worst, y)


def rosenthal_potential(net, x, marginal=False):
    """Sum over edges of the integral of the latency up to the edge load."""
    y = net.loads(np.asarray(x, dtype=float))
    return np.sum(_costs(net, marginal).integral(y), axis=-1)


def potential_gradient(net, x, marginal=False):
    """Partial derivatives of the potential in path coordinates (= path delays)."""
    y = net.loads(np.asarray(x, dtype=float))
    return _costs(net, marginal).phi(y) @ net.P


def aggregate_delay(net, x):
    """Total delay sum_r y_r phi_r(y_r), background traffic included."""
    y = net.loads(np.asarray(x, dtype=float))
    return np.sum(y * net.costs.phi(y), axis=-1)


def adjoint_potential(net, q, x, marginal=False):
    """L_q(x) = sum_r (y_r - y*_r) phi_r(y_r), evaluated edge-wise."""
    y = net.loads(np.asarray(x, dtype=float))
    ystar = net.loads(np.asarray(q, dtype=float))
    return np.sum((y - ystar) * _costs(net, marginal).phi(y), axis=-1)


def _per_path_rates(net, rates):
    if rates is None:
        return np.ones(net.n_paths)
    lam = np.broadcast_to(np.asarray(rates, dtype=float), (net.n_users,))
    if np.any(lam <= 0):
        raise ValueError("learning rates must be positive")
    return lam[net.owner]


def relative_entropy(net, q, x, rates=None):
    """Rate-adjusted Kullback-Leibler divergence of ``x`` from ``q``.

    Returns ``inf`` where ``x`` vanishes on the support of ``q``.
    """
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    weight = 1.0 / _per_path_rates(net, rates)
    supp = q > 0
    qs = q[supp]
    xs = x[..., supp]
    with np.errstate(divide="ignore"):
        terms = weight[supp] * qs * (np.log(qs) - np.log(xs))
    return np.sum(terms, axis=-1)


def marginal_latency(spec, y):
    """phi(y) + y phi'(y) for a single edge."""
    return float(EdgeCosts([spec], marginal=True).phi(np.array([float(y)]))[0])


def marginal_increasing(spec, y_max=None):
    """Whether the marginal latency is nondecreasing on ``[0, y_max]``.

    Closed form per family: affine 2a >= 0; constant 0; monomial
    c(k+1)k y^(k-1) >= 0; mm1 mu/(mu-y)^2 increasing below capacity.
    """
    if spec.family in ("affine", "constant", "mm1"):
        return True
    return spec.slope * (spec.exponent + 1.0) * spec.exponent >= 0
