"""Regular risk measures: values, directional derivatives, smoothness constants.

A regular risk measure is r(E_P[L(xi)]) for a concave differentiable r.  All
expectations here are exact weighted sums over finitely supported
distributions, accumulated in fixed index order for reproducibility.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ambiguity import MomentState

SIMPLEX_TOL = 1e-10


class DomainError(ValueError):
    """Argument outside the domain of the risk function r."""


@dataclass(frozen=True)
class RegularRiskSpec:
    """A risk measure r(E_P[L(xi)]) with moments flattened into R^M.

    ``beta`` is the canonical smoothness constant of r and ``diameter_d``
    bounds the diameter of {E_P[L]} over the ambiguity set; the risk measure
    is then (beta * diameter_d**2)-smooth.
    """

    l_map: Callable[[np.ndarray], np.ndarray]
    r_value: Callable[[np.ndarray], float]
    r_grad: Callable[[np.ndarray], np.ndarray]
    beta: float
    diameter_d: float
    diameter_certified: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.diameter_d < 0:
            raise ValueError("diameter_d must be nonnegative")


@dataclass(frozen=True)
class EntropicParams:
    """Risk-aversion parameters and expectation lower bound of the entropic risk."""

    theta: np.ndarray
    b_lower: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if np.any(theta <= 0):
            raise ValueError("all risk-aversion parameters must be positive")
        if self.b_lower <= 0:
            raise ValueError("b_lower must be positive")
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class FiniteSupportRiskSpec:
    """Arbitrary differentiable risk on the probability simplex over N atoms."""

    n_atoms: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    beta_prime: float

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("need at least one atom")
        if self.beta_prime < 0:
            raise ValueError("beta_prime must be nonnegative")


# --- generic regular risk operations ------------------------------------

def rr_value(spec: RegularRiskSpec, moments: np.ndarray) -> float:
    """r evaluated at caller-supplied moments E_P[L(xi)]."""
    return float(spec.r_value(np.asarray(moments, dtype=float)))


def rr_g_derivative(spec: RegularRiskSpec, moments_p: np.ndarray, moments_q: np.ndarray) -> float:
    """Directional derivative <grad r(m_P), m_Q - m_P> of a regular risk measure."""
    moments_p = np.asarray(moments_p, dtype=float)
    moments_q = np.asarray(moments_q, dtype=float)
    return float(np.dot(spec.r_grad(moments_p), moments_q - moments_p))


def smoothness_constant(spec: RegularRiskSpec) -> float:
    """Norm-free curvature bound C = beta * d^2 of a regular risk measure."""
    c = spec.beta * spec.diameter_d ** 2
    if not np.isfinite(c):
        raise ValueError("smoothness constant is not finite")
    return float(c)


def expectation_of(l_map, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Exact weighted sum of L over a finite support, in index order."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.asarray(weights, dtype=float).ravel()
    acc = None
    for w, xi in zip(weights, points):
        term = w * np.asarray(l_map(xi), dtype=float)
        acc = term if acc is None else acc + term
    return acc


# --- variance ------------------------------------------------------------

def variance_l_map(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.concatenate([np.outer(xi, xi).ravel(), xi])


def variance_moments_vector(state: MomentState) -> np.ndarray:
    """Flatten a moment state into its R^(n^2+n) vector representation."""
    return np.concatenate([state.sigma.ravel(), state.mu])


def variance_spec(n: int, diameter_d: float, certified: bool = True) -> RegularRiskSpec:
    """Variance risk trace(Sigma) - ||mu||^2, flattened moments in R^(n^2+n)."""

    def value(moments):
        sigma = moments[: n * n].reshape(n, n)
        mu = moments[n * n:]
        return float(np.trace(sigma) - mu @ mu)

    def grad(moments):
        mu = moments[n * n:]
        return np.concatenate([np.eye(n).ravel(), -2.0 * mu])

    return RegularRiskSpec(
        l_map=variance_l_map,
        r_value=value,
        r_grad=grad,
        beta=2.0,
        diameter_d=diameter_d,
        diameter_certified=certified,
    )


def variance_value(p: MomentState) -> float:
    return float(np.trace(p.sigma) - p.mu @ p.mu)


def variance_g_derivative(p: MomentState, q: MomentState) -> float:
    """trace(Sigma_Q - Sigma_P) - 2 mu_P^T (mu_Q - mu_P)."""
    if p.dim != q.dim:
        raise ValueError("moment states have different dimensions")
    return float(np.trace(q.sigma - p.sigma) - 2.0 * p.mu @ (q.mu - p.mu))


# --- entropic risk -------------------------------------------------------

def entropic_expectations(theta: np.ndarray, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-coordinate E[exp(-theta_j xi_j)] of a discrete distribution.

    Direct summation; callers keep |theta_j xi_j| <= 500 via support boxes.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.asarray(weights, dtype=float).ravel()
    out = np.zeros(theta.size)
    for w, xi in zip(weights, points):
        out += w * np.exp(-theta * xi)
    return out


def entropic_b_lower(theta: np.ndarray, xi_max: np.ndarray) -> float:
    """Lower bound b = min_j exp(-theta_j xi_j^max) from a support box."""
    theta = np.asarray(theta, dtype=float).ravel()
    xi_max = np.asarray(xi_max, dtype=float).ravel()
    return float(np.min(np.exp(-theta * xi_max)))


def entropic_value(params: EntropicParams, e: np.ndarray) -> float:
    e = np.asarray(e, dtype=float).ravel()
    bad = np.nonzero(e <= 0)[0]
    if bad.size:
        raise DomainError(f"nonpositive exponential moment at coordinate {bad[0]}")
    return float(np.sum(np.log(e) / params.theta))


def entropic_g_derivative(params: EntropicParams, e_p: np.ndarray, e_q: np.ndarray) -> float:
    """Directional derivative sum_j (e_q[j] - e_p[j]) / (theta_j e_p[j])."""
    e_p = np.asarray(e_p, dtype=float).ravel()
    e_q = np.asarray(e_q, dtype=float).ravel()
    bad = np.nonzero(e_p <= 0)[0]
    if bad.size:
        raise DomainError(f"nonpositive exponential moment at coordinate {bad[0]}")
    return float(np.sum((e_q - e_p) / (params.theta * e_p)))


def entropic_spec(params: EntropicParams, diameter_d: float, certified: bool = True) -> RegularRiskSpec:
    theta = params.theta

    def value(z):
        return entropic_value(params, z)

    def grad(z):
        z = np.asarray(z, dtype=float).ravel()
        bad = np.nonzero(z <= 0)[0]
        if bad.size:
            raise DomainError(f"nonpositive exponential moment at coordinate {bad[0]}")
        return 1.0 / (theta * z)

    beta = 1.0 / (params.b_lower ** 2 * np.min(theta))
    return RegularRiskSpec(
        l_map=lambda xi: np.exp(-theta * np.asarray(xi, dtype=float)),
        r_value=value,
        r_grad=grad,
        beta=beta,
        diameter_d=diameter_d,
        diameter_certified=certified,
    )


# --- finite support ------------------------------------------------------

def _check_simplex(p: np.ndarray, n_atoms: int) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.size != n_atoms:
        raise ValueError(f"expected {n_atoms} weights, got {p.size}")
    if np.any(p < -SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError("weights must lie on the probability simplex")
    return p


def finite_support_g_derivative(spec: FiniteSupportRiskSpec, p: np.ndarray, q: np.ndarray) -> float:
    """grad R(p)^T (q - p) for a risk on the simplex."""
    p = _check_simplex(p, spec.n_atoms)
    q = _check_simplex(q, spec.n_atoms)
    return float(np.dot(np.asarray(spec.gradient(p), dtype=float), q - p))


# --- utilities -----------------------------------------------------------

def check_gradient(value, gradient, point: np.ndarray, rel_tol: float = 1e-5,
                   step: float = 1e-6) -> None:
    """Validate a gradient against central finite differences of ``value``."""
    point = np.asarray(point, dtype=float)
    g = np.asarray(gradient(point), dtype=float)
    for i in range(point.size):
        e = np.zeros_like(point)
        e[i] = step
        fd = (value(point + e) - value(point - e)) / (2 * step)
        scale = 1.0 + abs(fd)
        if abs(fd - g[i]) > rel_tol * scale:
            raise ValueError(
                f"gradient mismatch at coordinate {i}: analytic {g[i]}, finite-difference {fd}"
            )


def estimate_diameter(moment_vectors) -> float:
    """Max pairwise distance of visited moment vectors; a non-certified estimate."""
    vs = [np.asarray(v, dtype=float).ravel() for v in moment_vectors]
    best = 0.0
    for i in range(len(vs)):
        for j in range(i + 1, len(vs)):
            best = max(best, float(np.linalg.norm(vs[i] - vs[j])))
    return best
