"""Discrete distributions, moment states and Wasserstein ambiguity sets."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

SIMPLEX_TOL = 1e-10

NORM_L2 = "l2"
NORM_LINF = "linf"
_NORMS = (NORM_L2, NORM_LINF)


def _check_norm(norm_tag: str) -> str:
    if norm_tag not in _NORMS:
        raise ValueError(f"unknown transportation norm {norm_tag!r}, expected one of {_NORMS}")
    return norm_tag


def point_norm(q: np.ndarray, norm_tag: str) -> float:
    """Transportation-cost norm of a single displacement vector."""
    _check_norm(norm_tag)
    q = np.asarray(q, dtype=float)
    if norm_tag == NORM_L2:
        return float(np.linalg.norm(q))
    return float(np.max(np.abs(q))) if q.size else 0.0


def dual_norm(x: np.ndarray, norm_tag: str) -> float:
    """Dual of the transportation norm (L2 is self dual, dual of Linf is L1)."""
    _check_norm(norm_tag)
    x = np.asarray(x, dtype=float)
    if norm_tag == NORM_L2:
        return float(np.linalg.norm(x))
    return float(np.sum(np.abs(x)))


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported distribution: atoms ``points`` with simplex ``weights``."""

    points: np.ndarray  # (K, n)
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        if points.shape[0] != weights.shape[0]:
            raise ValueError(
                f"{points.shape[0]} points but {weights.shape[0]} weights"
            )
        if np.any(weights < -SIMPLEX_TOL):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def uniform(points: np.ndarray) -> "DiscreteDistribution":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        k = points.shape[0]
        return DiscreteDistribution(points, np.full(k, 1.0 / k))

    def to_json_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @staticmethod
    def from_json_dict(d: dict) -> "DiscreteDistribution":
        return DiscreteDistribution(np.asarray(d["points"]), np.asarray(d["weights"]))


@dataclass(frozen=True)
class MomentState:
    """Second/first moment pair (E[xx^T], E[x]) of a distribution."""

    sigma: np.ndarray  # (n, n)
    mu: np.ndarray  # (n,)

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        mu = np.asarray(self.mu, dtype=float).ravel()
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma shape {sigma.shape} incompatible with mu of size {mu.size}")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) > 1e-10:
            raise ValueError("sigma must be symmetric")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mu", mu)

    @property
    def dim(self) -> int:
        return self.mu.size

    def covariance(self) -> np.ndarray:
        return self.sigma - np.outer(self.mu, self.mu)

    def is_valid(self, tol: float = 1e-8) -> bool:
        """Eigenvalue floor check of sigma - mu mu^T (valid moment pair)."""
        return bool(np.linalg.eigvalsh(self.covariance()).min() >= -tol)


# --- support descriptors -------------------------------------------------

@dataclass(frozen=True)
class Unconstrained:
    kind: str = field(default="unconstrained", init=False)


@dataclass(frozen=True)
class Ellipsoid:
    """Support set {xi : xi^T M xi <= 1} for a symmetric PSD matrix M."""

    M: np.ndarray
    kind: str = field(default="ellipsoid", init=False)

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("M must be square")
        if np.max(np.abs(M - M.T)) > 1e-10:
            raise ValueError("M must be symmetric")
        if np.linalg.eigvalsh(M).min() < -1e-10:
            raise ValueError("M must be positive semidefinite")
        object.__setattr__(self, "M", M)

    def contains(self, xi: np.ndarray, tol: float = 1e-8) -> bool:
        xi = np.asarray(xi, dtype=float)
        return bool(xi @ self.M @ xi <= 1.0 + tol)


@dataclass(frozen=True)
class FiniteSupport:
    points: np.ndarray
    kind: str = field(default="finite", init=False)

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))


Support = Unconstrained | Ellipsoid | FiniteSupport


@dataclass(frozen=True)
class AmbiguitySpec:
    """Wasserstein ball around a nominal discrete distribution."""

    order_m: int
    radius_rho: float
    norm_tag: str
    support: Support
    nominal: DiscreteDistribution

    def __post_init__(self):
        if self.order_m < 1:
            raise ValueError("Wasserstein order must be a positive integer")
        if self.radius_rho < 0:
            raise ValueError("radius must be nonnegative")
        _check_norm(self.norm_tag)
        if isinstance(self.support, Ellipsoid):
            if self.norm_tag != NORM_L2:
                raise ValueError("ellipsoidal support requires the L2 transportation norm")
            for i, xi in enumerate(self.nominal.points):
                if not self.support.contains(xi):
                    raise ValueError(f"nominal atom {i} lies outside the support ellipsoid")

    def to_json_dict(self) -> dict:
        d: dict = {"m": self.order_m, "rho": self.radius_rho, "norm": self.norm_tag}
        if isinstance(self.support, Ellipsoid):
            d["support"] = {"type": "ellipsoid", "M": self.support.M.tolist()}
        elif isinstance(self.support, FiniteSupport):
            d["support"] = {"type": "finite", "points": self.support.points.tolist()}
        else:
            d["support"] = {"type": "unconstrained"}
        d["nominal"] = self.nominal.to_json_dict()
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "AmbiguitySpec":
        sup = d.get("support", {"type": "unconstrained"})
        if sup["type"] == "ellipsoid":
            support: Support = Ellipsoid(np.asarray(sup["M"]))
        elif sup["type"] == "finite":
            support = FiniteSupport(np.asarray(sup["points"]))
        elif sup["type"] == "unconstrained":
            support = Unconstrained()
        else:
            raise ValueError(f"unknown support type {sup['type']!r}")
        return AmbiguitySpec(
            order_m=int(d["m"]),
            radius_rho=float(d["rho"]),
            norm_tag=str(d["norm"]),
            support=support,
            nominal=DiscreteDistribution.from_json_dict(d["nominal"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


# --- moment operations ---------------------------------------------------

def moments_of(dist: DiscreteDistribution) -> MomentState:
    """Exact (E[xx^T], E[x]) of a discrete distribution, summed in index order."""
    n = dist.dim
    sigma = np.zeros((n, n))
    mu = np.zeros(n)
    for w, xi in zip(dist.weights, dist.points):
        sigma += w * np.outer(xi, xi)
        mu += w * xi
    sigma = 0.5 * (sigma + sigma.T)
    return MomentState(sigma, mu)


def mix_moments(p: MomentState, q: MomentState, gamma: float) -> MomentState:
    """Convex combination (1 - gamma) p + gamma q of both moment fields."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma={gamma} outside [0, 1]")
    if p.dim != q.dim:
        raise ValueError("moment states have different dimensions")
    return MomentState(
        p.sigma + gamma * (q.sigma - p.sigma),
        p.mu + gamma * (q.mu - p.mu),
    )


def perturbation_radius(displacements, order_m: int, norm_tag: str) -> float:
    """Coupling upper bound on W_m obtained by matching atom i to atom i + q_i.

    Assumes one displacement per nominal atom and uniform weights.
    """
    qs = np.atleast_2d(np.asarray(displacements, dtype=float))
    n = qs.shape[0]
    norms = np.array([point_norm(q, norm_tag) for q in qs])
    return float(np.mean(norms ** order_m) ** (1.0 / order_m)) if n else 0.0


def exact_wasserstein(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    order_m: int,
    norm_tag: str,
) -> float:
    """Optimal transport distance between two small discrete distributions.

    Solves the dense transportation LP; test-scale utility, capped at 64 atoms
    total.
    """
    if p.n_atoms + q.n_atoms > 64:
        raise ValueError("exact_wasserstein is a test utility, at most 64 atoms total")
    if p.dim != q.dim:
        raise ValueError("distributions live in different dimensions")
    np_, nq = p.n_atoms, q.n_atoms
    cost = np.empty((np_, nq))
    for i in range(np_):
        for j in range(nq):
            cost[i, j] = point_norm(p.points[i] - q.points[j], norm_tag) ** order_m

    # marginal constraints: row sums = p.weights, column sums = q.weights
    a_eq = []
    b_eq = []
    for i in range(np_):
        row = np.zeros((np_, nq))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
        b_eq.append(p.weights[i])
    for j in range(nq):
        col = np.zeros((np_, nq))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
        b_eq.append(q.weights[j])
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise ValueError(f"transportation LP failed: {res.message}")
    return float(max(res.fun, 0.0) ** (1.0 / order_m))


def wasserstein_by_enumeration(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    order_m: int,
    norm_tag: str,
) -> float:
    """Brute-force oracle: minimize over vertex couplings of the Birkhoff-style
    polytope via enumeration of permutation couplings (equal-size uniform
    marginals only)."""
    if p.n_atoms != q.n_atoms:
        raise ValueError("enumeration oracle needs equal atom counts")
    if not (np.allclose(p.weights, 1.0 / p.n_atoms) and np.allclose(q.weights, 1.0 / q.n_atoms)):
        raise ValueError("enumeration oracle needs uniform marginals")
    k = p.n_atoms
    best = np.inf
    for perm in itertools.permutations(range(k)):
        cost = sum(
            point_norm(p.points[i] - q.points[perm[i]], norm_tag) ** order_m for i in range(k)
        ) / k
        best = min(best, cost)
    return float(best ** (1.0 / order_m))
