"""Distributionally robust minimum-variance portfolio machinery.

Worst-case variance oracles over Wasserstein balls (closed form for
unconstrained support, trust-region subproblems for ellipsoidal support),
the simplex-constrained inner quadratic solver, and regularity constants.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .ambiguity import (
    NORM_L2,
    NORM_LINF,
    AmbiguitySpec,
    DiscreteDistribution,
    Ellipsoid,
    FiniteSupport,
    MomentState,
    Unconstrained,
    dual_norm,
    mix_moments,
    moments_of,
)


class UnboundedOracleError(ValueError):
    """The worst-case perturbation problem has no finite optimum."""


class InfeasibleError(ValueError):
    """The feasible portfolio set is empty."""


# --- feasible portfolio sets ---------------------------------------------

def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based, exact)."""
    y = np.asarray(y, dtype=float).ravel()
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    cond = u - css / idx > 0
    k = idx[cond][-1]
    tau = css[k - 1] / k
    return np.maximum(y - tau, 0.0)


@dataclass(frozen=True)
class FullSimplex:
    kind: str = field(default="simplex", init=False)

    def project(self, y: np.ndarray, mean: np.ndarray) -> np.ndarray:
        return project_simplex(y)

    def check(self, mean: np.ndarray) -> None:
        pass


@dataclass(frozen=True)
class ReturnFloor:
    """Simplex subset {x : mean . x >= alpha_bar} wrt the nominal mean."""

    alpha_bar: float
    kind: str = field(default="return_floor", init=False)

    def check(self, mean: np.ndarray) -> None:
        if float(np.max(mean)) < self.alpha_bar - 1e-12:
            raise InfeasibleError(
                f"return floor {self.alpha_bar} exceeds the best attainable {np.max(mean)}"
            )

    def project(self, y: np.ndarray, mean: np.ndarray) -> np.ndarray:
        x = project_simplex(y)
        if mean @ x >= self.alpha_bar - 1e-12:
            return x
        self.check(mean)
        # activate the floor: bisection on the multiplier of the mean constraint
        lo, hi = 0.0, 1.0
        while mean @ project_simplex(y + hi * mean) < self.alpha_bar:
            hi *= 2.0
            if hi > 1e12:
                raise InfeasibleError("return floor unattainable within the simplex")
        for _ in range(200):
            lam = 0.5 * (lo + hi)
            if mean @ project_simplex(y + lam * mean) < self.alpha_bar:
                lo = lam
            else:
                hi = lam
        return project_simplex(y + hi * mean)


FeasibleX = FullSimplex | ReturnFloor


@dataclass(frozen=True)
class MinVarInstance:
    samples: np.ndarray  # (N, n)
    ambiguity: AmbiguitySpec
    feasible_x: FeasibleX = FullSimplex()
    reg_alpha: float = 0.0

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.shape[0] < 1:
            raise ValueError("need at least one sample")
        if self.reg_alpha < 0:
            raise ValueError("reg_alpha must be nonnegative")
        if isinstance(self.ambiguity.support, Ellipsoid):
            for i, xi in enumerate(samples):
                if not self.ambiguity.support.contains(xi):
                    raise ValueError(f"sample {i} lies outside the support ellipsoid")
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def nominal(self) -> DiscreteDistribution:
        return DiscreteDistribution.uniform(self.samples)

    @property
    def nominal_moments(self) -> MomentState:
        return moments_of(self.nominal)

    def to_json_dict(self) -> dict:
        amb = self.ambiguity.to_json_dict()
        if isinstance(self.feasible_x, ReturnFloor):
            feas: dict = {"type": "return_floor", "alpha_bar": self.feasible_x.alpha_bar}
        else:
            feas = {"type": "simplex"}
        return {
            "n": self.n,
            "N": self.n_samples,
            "samples": self.samples.tolist(),
            "rho": amb["rho"],
            "m": amb["m"],
            "norm": amb["norm"],
            "support": amb["support"],
            "feasible_x": feas,
            "reg_alpha": self.reg_alpha,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1)

    @staticmethod
    def from_json_dict(d: dict) -> "MinVarInstance":
        samples = np.asarray(d["samples"], dtype=float)
        nominal = DiscreteDistribution.uniform(samples)
        amb = AmbiguitySpec.from_json_dict(
            {
                "m": d["m"],
                "rho": d["rho"],
                "norm": d["norm"],
                "support": d.get("support", {"type": "unconstrained"}),
                "nominal": nominal.to_json_dict(),
            }
        )
        feas = d.get("feasible_x", {"type": "simplex"})
        feasible: FeasibleX
        if feas["type"] == "return_floor":
            feasible = ReturnFloor(float(feas["alpha_bar"]))
        else:
            feasible = FullSimplex()
        return MinVarInstance(
            samples=samples,
            ambiguity=amb,
            feasible_x=feasible,
            reg_alpha=float(d.get("reg_alpha", 0.0)),
        )

    @staticmethod
    def from_json(text: str) -> "MinVarInstance":
        return MinVarInstance.from_json_dict(json.loads(text))


# --- variance risk -------------------------------------------------------

def variance_risk(x: np.ndarray, p: MomentState) -> float:
    """x^T (Sigma - mu mu^T) x, computed as x^T Sigma x - (x^T mu)^2."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != p.dim:
        raise ValueError(f"x has size {x.size}, moments have dimension {p.dim}")
    return float(x @ p.sigma @ x - (x @ p.mu) ** 2)


def variance_risk_g_derivative(x: np.ndarray, p: MomentState, q: MomentState) -> float:
    """x^T (Sigma_Q - Sigma_P) x - 2 (x^T mu_P) (x^T (mu_Q - mu_P))."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != p.dim or p.dim != q.dim:
        raise ValueError("dimension mismatch")
    return float(
        x @ (q.sigma - p.sigma) @ x - 2.0 * (x @ p.mu) * (x @ (q.mu - p.mu))
    )


# --- inner Markowitz solver ----------------------------------------------

def inner_markowitz(
    p: MomentState,
    reg_alpha: float = 0.0,
    feasible_x: FeasibleX = FullSimplex(),
    tol: float = 1e-9,
    max_iter: int = 200_000,
) -> tuple[np.ndarray, float]:
    """Minimize x^T (Sigma - mu mu^T) x + (reg/2)||x||^2 over the feasible set.

    Accelerated projected gradient with exact simplex projection; terminates
    at projected-gradient KKT residual <= tol.  Deterministic given inputs.
    """
    if reg_alpha < 0:
        raise ValueError("reg_alpha must be nonnegative")
    n = p.dim
    cov = p.covariance()
    cov = 0.5 * (cov + cov.T)
    mean = p.mu
    feasible_x.check(mean)

    eigmax = float(np.linalg.eigvalsh(cov).max())
    lip = max(2.0 * eigmax + reg_alpha, 1e-12)

    def grad(x):
        return 2.0 * cov @ x + reg_alpha * x

    def value(x):
        return float(x @ cov @ x + 0.5 * reg_alpha * x @ x)

    x = feasible_x.project(np.full(n, 1.0 / n), mean)
    z = x.copy()
    t = 1.0
    residual = np.inf
    for _ in range(max_iter):
        g = grad(z)
        x_new = feasible_x.project(z - g / lip, mean)
        # monotone restart keeps the iteration well behaved on near-singular cov
        if value(x_new) > value(x):
            z = x.copy()
            t = 1.0
            g = grad(z)
            x_new = feasible_x.project(z - g / lip, mean)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        gx = grad(x)
        # step-scaled gradient mapping: invariant to the objective's scale
        residual = float(np.linalg.norm(x - feasible_x.project(x - gx / lip, mean)))
        if residual <= tol:
            return x, value(x)
    raise RuntimeError(
        f"inner Markowitz solve did not converge: KKT residual {residual:.3e} > {tol:.1e}"
    )


# --- unconstrained-support oracle ----------------------------------------

def max_direction_unit_ball(x: np.ndarray, norm_tag: str) -> np.ndarray:
    """argmax of x . q over the transportation-norm unit ball.

    L2: x/||x||_2; Linf: sign vector with +1 on zero coordinates (fixed
    tie-break for determinism).  Returns zeros for x = 0 under L2.
    """
    x = np.asarray(x, dtype=float).ravel()
    if norm_tag == NORM_L2:
        nrm = np.linalg.norm(x)
        return x / nrm if nrm > 0 else np.zeros_like(x)
    if norm_tag == NORM_LINF:
        return np.where(x >= 0.0, 1.0, -1.0)
    raise ValueError(f"unsupported norm {norm_tag!r}")


def eta_star_unconstrained(
    x: np.ndarray, samples: np.ndarray, v: np.ndarray, rho: float, norm_tag: str
) -> float:
    """Optimal dual multiplier for the order-2 worst-case variance problem."""
    if rho <= 0:
        raise ValueError("rho must be positive; singleton ambiguity is handled upstream")
    x = np.asarray(x, dtype=float).ravel()
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    v = np.asarray(v, dtype=float).ravel()
    a = dual_norm(x, norm_tag)
    inner = samples @ x - x @ v
    msq = float(np.mean(inner ** 2))
    return a * a + (a / rho) * np.sqrt(msq)


def perturbation_unconstrained(
    eta: float, xi: np.ndarray, v: np.ndarray, x: np.ndarray, norm_tag: str,
    tol: float = 1e-12,
) -> np.ndarray:
    """Worst-case displacement of one atom for the order-2 unconstrained problem."""
    x = np.asarray(x, dtype=float).ravel()
    xi = np.asarray(xi, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    a = dual_norm(x, norm_tag)
    inner = float(x @ (xi - v))
    denom = eta - a * a
    if denom < -tol * max(1.0, a * a):
        raise UnboundedOracleError(
            f"eta={eta} below ||x||_*^2={a * a}: perturbation problem is unbounded"
        )
    if denom <= tol * max(1.0, a * a):
        if abs(inner) > 1e-9 * max(1.0, np.linalg.norm(xi - v)):
            raise UnboundedOracleError(
                "eta equals ||x||_*^2 with x.(xi - v) != 0: unbounded perturbation"
            )
        return np.zeros_like(xi)
    return (a * inner / denom) * max_direction_unit_ball(x, norm_tag)


@dataclass
class OracleOutput:
    eta_star: float
    displacements: np.ndarray  # (N, n)
    new_moments: MomentState
    gap_estimate: float
    dual_gap: float = 0.0  # achieved duality gap (exact oracles report 0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "eta_star": self.eta_star,
                "displacements": self.displacements.tolist(),
                "gap": self.gap_estimate,
                "dual_gap": self.dual_gap,
            }
        )


def oracle_unconstrained(
    x: np.ndarray, instance: MinVarInstance, p: MomentState, v: np.ndarray | None = None
) -> OracleOutput:
    """Exact worst-case direction for unconstrained support and order m = 2."""
    amb = instance.ambiguity
    if not isinstance(amb.support, Unconstrained):
        raise ValueError("oracle_unconstrained requires unconstrained support")
    if amb.order_m != 2:
        raise UnboundedOracleError(
            f"order m={amb.order_m}: the unconstrained perturbation problem is "
            "unbounded for m < 2 and has no closed form here for m > 2"
        )
    x = np.asarray(x, dtype=float).ravel()
    if v is None:
        v = p.mu
    samples = instance.samples
    rho = amb.radius_rho
    if rho == 0.0:
        q = np.zeros_like(samples)
        new_moments = instance.nominal_moments
        gap = variance_risk_g_derivative(x, p, new_moments)
        return OracleOutput(0.0, q, new_moments, gap)
    eta = eta_star_unconstrained(x, samples, v, rho, amb.norm_tag)
    q = np.vstack(
        [perturbation_unconstrained(eta, xi, v, x, amb.norm_tag) for xi in samples]
    )
    new_moments = moments_of(DiscreteDistribution.uniform(samples + q))
    gap = variance_risk_g_derivative(x, p, new_moments)
    return OracleOutput(eta, q, new_moments, gap)


# --- closed-form saddle (unconstrained support, m = 2) -------------------

def _feasible_linear_min(g: np.ndarray, feasible_x: FeasibleX, mean: np.ndarray) -> float:
    """min of g . y over the feasible set (exact for the simplex)."""
    if isinstance(feasible_x, FullSimplex):
        return float(np.min(g))
    from scipy.optimize import linprog

    n = g.size
    res = linprog(
        g,
        A_ub=[(-mean).tolist()],
        b_ub=[-feasible_x.alpha_bar],
        A_eq=[[1.0] * n],
        b_eq=[1.0],
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise InfeasibleError("return-floor feasible set is empty")
    return float(res.fun)


def closed_form_saddle(
    instance: MinVarInstance,
    tol: float = 1e-7,
    max_iter: int = 200_000,
) -> tuple[np.ndarray, DiscreteDistribution]:
    """Saddle pair from the convex surrogate min sqrt(x^T V x) + rho ||x||_*.

    Projected (sub)gradient descent with backtracking; terminates when the
    linearized stationarity gap over the feasible set falls below tol.  The
    worst-case distribution is built by shifting every sample along the
    maximizing unit direction of x.
    """
    amb = instance.ambiguity
    if not isinstance(amb.support, Unconstrained) or amb.order_m != 2:
        raise ValueError("closed-form saddle requires unconstrained support and m = 2")
    rho = amb.radius_rho
    norm_tag = amb.norm_tag
    nominal = instance.nominal_moments
    cov = nominal.covariance()
    cov = 0.5 * (cov + cov.T)
    mean = nominal.mu
    n = instance.n

    def h(x):
        quad = max(float(x @ cov @ x), 0.0)
        return np.sqrt(quad) + rho * dual_norm(x, norm_tag)

    def subgrad(x):
        quad = max(float(x @ cov @ x), 0.0)
        g = np.zeros(n) if quad < 1e-28 else (cov @ x) / np.sqrt(quad)
        if rho > 0:
            if norm_tag == NORM_L2:
                nx = np.linalg.norm(x)
                if nx > 0:
                    g = g + rho * x / nx
            else:
                g = g + rho * np.where(x >= 0.0, 1.0, -1.0)
        return g

    x = instance.feasible_x.project(np.full(n, 1.0 / n), mean)
    gap = np.inf
    for _ in range(max_iter):
        g = subgrad(x)
        gap = float(g @ x - _feasible_linear_min(g, instance.feasible_x, mean))
        if gap <= tol * (1.0 + abs(h(x))):
            break
        t = 1.0
        hx = h(x)
        while True:
            x_new = instance.feasible_x.project(x - t * g, mean)
            if h(x_new) <= hx - 1e-4 * g @ (x - x_new) or t < 1e-18:
                break
            t *= 0.5
        if np.array_equal(x_new, x):
            break
        x = x_new
    else:
        raise RuntimeError(
            f"surrogate solve did not converge: stationarity gap {gap:.3e} > {tol:.1e}"
        )

    quad = max(float(x @ cov @ x), 0.0)
    if quad < 1e-14:
        q = np.zeros_like(instance.samples)
    else:
        direction = max_direction_unit_ball(x, norm_tag)
        scale = rho / np.sqrt(quad)
        inner = instance.samples @ x - x @ mean
        q = scale * np.outer(inner, direction)
    p_star = DiscreteDistribution.uniform(instance.samples + q)
    return x, p_star


def worst_case_std(instance: MinVarInstance, x: np.ndarray) -> float:
    """sqrt(x^T V x) + rho ||x||_* (the surrogate objective at x)."""
    nominal = instance.nominal_moments
    quad = max(float(x @ nominal.covariance() @ x), 0.0)
    return float(np.sqrt(quad) + instance.ambiguity.radius_rho * dual_norm(x, instance.ambiguity.norm_tag))


# --- trust-region subproblem for ellipsoidal support ---------------------

def _trs_min_spectral(d: np.ndarray, beta: np.ndarray, tol: float = 1e-13):
    """min z^T diag(d) z - 2 beta^T z over ||z|| <= 1, in the eigenbasis.

    Returns (coefficients z, multiplier lambda, value).  Handles interior
    solutions and the hard case (beta orthogonal to the bottom eigenspace).
    """
    d_min = float(d.min())

    def z_of(lam):
        return beta / (d + lam)

    # interior candidate
    if d_min > 0:
        z0 = z_of(0.0)
        if z0 @ z0 <= 1.0 + 1e-14:
            return z0, 0.0, float(z0 @ (d * z0) - 2.0 * beta @ z0)

    lam_bar = max(0.0, -d_min)

    def norm_sq(lam):
        z = z_of(lam)
        return float(z @ z)

    # hard case: no pole at lam_bar in the active directions
    bottom = np.abs(d - d_min) <= 1e-12 * max(1.0, abs(d_min))
    eps = max(lam_bar, 1.0) * 1e-11
    if lam_bar > 0 and np.all(np.abs(beta[bottom]) <= 1e-12 * max(1.0, np.abs(beta).max(initial=0.0))):
        mask = ~bottom
        z = np.zeros_like(beta)
        z[mask] = beta[mask] / (d[mask] + lam_bar)
        nsq = float(z @ z)
        if nsq <= 1.0:
            # move along a bottom eigendirection to the boundary
            extra = np.sqrt(max(1.0 - nsq, 0.0))
            z_full = z.copy()
            idx = int(np.argmax(bottom))
            z_full[idx] += extra
            val = float(z_full @ (d * z_full) - 2.0 * beta @ z_full)
            return z_full, lam_bar, val

    # boundary: solve ||z(lam)||^2 = 1 on (lam_bar, inf)
    lo = lam_bar + eps
    while norm_sq(lo) < 1.0:
        if eps > 1e30:
            break
        eps *= 0.25
        lo = lam_bar + eps
        if eps < 1e-300:
            break
    hi = max(lo * 2.0, lam_bar + 1.0)
    while norm_sq(hi) > 1.0:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("secular equation bracket growth failed")
    if norm_sq(lo) < 1.0:
        lam = lo
    else:
        lam = brentq(lambda l: norm_sq(l) - 1.0, lo, hi, xtol=1e-15, rtol=8.9e-16)
    z = z_of(lam)
    nz = np.linalg.norm(z)
    if nz > 0:
        z = z / nz  # exact boundary feasibility
    val = float(z @ (d * z) - 2.0 * beta @ z)
    return z, float(lam), val


def _trs_min_spectral_batch(d: np.ndarray, betas: np.ndarray):
    """Vectorized min z^T diag(d) z - 2 beta^T z over ||z|| <= 1 for many betas.

    Shares the eigenvalue vector ``d`` across rows of ``betas`` and solves the
    boundary secular equations by a bracketed Newton iteration on
    1 - 1/||z(lam)||, which is monotone on (max(0, -d_min), inf).
    Returns (Z, lams, values) with one row/entry per beta.
    """
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    n_rows = betas.shape[0]
    d_min = float(d.min())
    lam_bar = max(0.0, -d_min)

    z_out = np.zeros_like(betas)
    lam_out = np.full(n_rows, lam_bar)
    boundary = np.ones(n_rows, dtype=bool)

    if d_min > 0:
        z0 = betas / d
        interior = np.einsum("ij,ij->i", z0, z0) <= 1.0 + 1e-14
        z_out[interior] = z0[interior]
        lam_out[interior] = 0.0
        boundary = ~interior

    if np.any(boundary):
        b = betas[boundary]
        bottom = np.abs(d - d_min) <= 1e-12 * max(1.0, abs(d_min))
        # hard-case rows: no pole at lam_bar and the regular part is inside
        b_scale = np.maximum(np.abs(b).max(axis=1), 1.0)
        no_pole = (np.abs(b[:, bottom]).max(axis=1, initial=0.0) <= 1e-12 * b_scale)
        denom_reg = np.where(bottom, 1.0, d + lam_bar)
        z_reg = np.where(bottom, 0.0, b / denom_reg)
        nsq_reg = np.einsum("ij,ij->i", z_reg, z_reg)
        hard = no_pole & (nsq_reg <= 1.0) & (lam_bar > 0)

        lam = np.full(b.shape[0], lam_bar)
        z = np.zeros_like(b)
        if np.any(hard):
            zh = z_reg[hard].copy()
            extra = np.sqrt(np.maximum(1.0 - nsq_reg[hard], 0.0))
            idx = int(np.argmax(bottom))
            zh[:, idx] += extra
            z[hard] = zh
        easy = ~hard
        if np.any(easy):
            be = b[easy]
            bsq = be * be
            # lam_bar + ||beta|| is always right of the root (||z|| <= 1 there),
            # so Newton walks down monotonically; bisection is the safeguard
            scale = np.sqrt(bsq.sum(axis=1))
            lo = np.full(be.shape[0], lam_bar)
            lam_e = lam_bar + scale
            for _ in range(100):
                denom = d + lam_e[:, None]
                ratio = bsq / (denom * denom)
                wsq = ratio.sum(axis=1)
                w = np.sqrt(np.maximum(wsq, 1e-300))
                f = 1.0 - 1.0 / w  # root at ||z|| = 1, decreasing in lam
                if np.max(np.abs(f)) < 1e-11:
                    break
                lo = np.where(f > 0, lam_e, lo)
                fp = (ratio / denom).sum(axis=1) / (w * wsq)
                cand = lam_e + f / np.maximum(fp, 1e-300)
                lam_e = np.where((cand > lo) & np.isfinite(cand), cand, 0.5 * (lam_e + lo))
            ze = be / (d + lam_e[:, None])
            nz = np.sqrt(np.maximum((ze * ze).sum(axis=1), 1e-300))
            ze = ze / nz[:, None]
            z[easy] = ze
            lam[easy] = lam_e
        z_out[boundary] = z
        lam_out[boundary] = lam

    values = np.einsum("ij,j,ij->i", z_out, d, z_out) - 2.0 * np.einsum(
        "ij,ij->i", betas, z_out
    )
    return z_out, lam_out, values


class _EllipsoidTransform:
    """Cholesky change of variables z = L^T q' mapping the ellipsoid to the ball."""

    def __init__(self, M: np.ndarray):
        eigs = np.linalg.eigvalsh(M)
        if eigs.min() <= 1e-14:
            raise ValueError("support ellipsoid matrix must be positive definite")
        self.L = np.linalg.cholesky(M)
        self.Linv = np.linalg.inv(self.L)

    def quad_matrix(self, A: np.ndarray) -> np.ndarray:
        a = self.Linv @ A @ self.Linv.T
        return 0.5 * (a + a.T)

    def vec(self, b: np.ndarray) -> np.ndarray:
        return self.Linv @ b

    def back(self, z: np.ndarray) -> np.ndarray:
        return self.Linv.T @ z


def gtrs_subproblem(
    x: np.ndarray, eta: float, xi: np.ndarray, v: np.ndarray, M: np.ndarray
) -> tuple[np.ndarray, float, float]:
    """Maximize the per-sample perturbation objective over the support ellipsoid.

    Solves sup { q'^T (x x^T - eta I) q' + 2 q'.(eta xi - (x x^T) v) :
    q'^T M q' <= 1 } plus the constant (x.v)^2 - eta ||xi||^2, as a
    generalized trust-region subproblem.  Returns (q', lambda, value).
    """
    x = np.asarray(x, dtype=float).ravel()
    xi = np.asarray(xi, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    tf = _EllipsoidTransform(np.asarray(M, dtype=float))
    a_mat = eta * np.eye(x.size) - np.outer(x, x)
    b = eta * xi - x * (x @ v)
    const = (x @ v) ** 2 - eta * (xi @ xi)
    a_t = tf.quad_matrix(a_mat)
    d, u = np.linalg.eigh(a_t)
    beta = u.T @ tf.vec(b)
    z, lam, val = _trs_min_spectral(d, beta)
    q_prime = tf.back(u @ z)
    return q_prime, lam, float(-val + const)


def oracle_ellipsoidal(
    x: np.ndarray, instance: MinVarInstance, p: MomentState, v: np.ndarray | None = None,
    rel_tol: float = 1e-8, eta_hint: float | None = None,
) -> OracleOutput:
    """Worst-case direction for ellipsoidal support via the 1-D dual search.

    Minimizes phi(eta) = eta rho^2 + mean_i J_i(eta) over eta >= 0 by
    bracketed golden-section, where each J_i is a trust-region subproblem
    sharing one eigendecomposition per eta; reconstructs the perturbed atoms
    from the subproblem solutions and reports the achieved duality gap.
    """
    amb = instance.ambiguity
    if not isinstance(amb.support, Ellipsoid):
        raise ValueError("oracle_ellipsoidal requires ellipsoidal support")
    if amb.order_m != 2 or amb.norm_tag != NORM_L2:
        raise ValueError("ellipsoidal oracle requires m = 2 and the L2 norm")
    x = np.asarray(x, dtype=float).ravel()
    if v is None:
        v = p.mu
    samples = instance.samples
    rho = amb.radius_rho
    n, big_n = instance.n, instance.n_samples
    tf = _EllipsoidTransform(amb.support.M)
    xv = float(x @ v)

    def solve_all(eta: float):
        a_mat = eta * np.eye(n) - np.outer(x, x)
        a_t = tf.quad_matrix(a_mat)
        d, u = np.linalg.eigh(a_t)
        # b_i = eta xi_i - x (x.v), transformed and rotated into the eigenbasis
        bs = eta * samples - x * xv
        betas = (u.T @ tf.Linv @ bs.T).T
        z_coeffs, _, vals = _trs_min_spectral_batch(d, betas)
        consts = xv * xv - eta * np.einsum("ij,ij->i", samples, samples)
        values = -vals + consts
        zs = (u @ z_coeffs.T).T
        return values, zs

    def mean_disp_sq(zs) -> float:
        q = zs @ tf.Linv - samples
        return float(np.mean(np.einsum("ij,ij->i", q, q)))

    def dphi(eta: float) -> float:
        # envelope theorem: d/d(eta) of each subproblem value is -||q' - xi||^2
        _, zs = solve_all(eta)
        return rho * rho - mean_disp_sq(zs)

    if rho == 0.0 or not np.any(x):
        # no budget, or a decision with no exposure: the derivative is flat
        q = np.zeros_like(samples)
        new_moments = instance.nominal_moments
        return OracleOutput(0.0, q, new_moments, variance_risk_g_derivative(x, p, new_moments))

    # the dual is convex in eta, so its derivative is increasing: root-find it
    eta = None
    if eta_hint is not None and eta_hint > 0:
        lo_h, hi_h = eta_hint / 4.0, eta_hint * 4.0
        f_lo, f_hi = dphi(lo_h), dphi(hi_h)
        if f_lo < 0.0 < f_hi:
            eta = float(
                brentq(dphi, lo_h, hi_h, xtol=rel_tol * max(1.0, hi_h), rtol=1e-10)
            )
    if eta is None:
        if dphi(0.0) >= 0.0:
            eta = 0.0
        else:
            hi = max(1.0, 2.0 * float(x @ x))
            grow = 0
            while dphi(hi) <= 0.0:
                hi *= 2.0
                grow += 1
                if grow > 200:
                    raise ArithmeticError("dual search interval growth failed; phi not coercive")
            eta = float(
                brentq(dphi, 0.0, hi, xtol=rel_tol * max(1.0, hi), rtol=1e-10)
            )

    values, zs = solve_all(eta)
    dual_value = float(eta * rho * rho + np.mean(values))
    new_points = np.vstack([tf.back(z) for z in zs])
    q = new_points - samples
    # complementarity in eta is only approximate: scale back onto the budget
    radius = float(np.sqrt(np.mean(np.einsum("ij,ij->i", q, q))))
    if radius > rho:
        q = q * (rho / radius)
        new_points = samples + q
    new_moments = moments_of(DiscreteDistribution.uniform(new_points))
    primal = float(np.mean((new_points @ x - xv) ** 2))
    gap = variance_risk_g_derivative(x, p, new_moments)
    return OracleOutput(eta, q, new_moments, gap, dual_gap=max(0.0, dual_value - primal))


# --- regularity constants ------------------------------------------------

@dataclass(frozen=True)
class RegularityConstants:
    b_mu: float
    b_sigma: float
    c1: float
    c2: float


def regularity_constants(
    instance: MinVarInstance, b_sigma: float | None = None, b_mu: float | None = None
) -> RegularityConstants:
    """Certified moment-diameter bounds and the derived Lipschitz constants.

    Ellipsoid support of radius r: B_mu = 2r, B_Sigma = 2r^2.  Unconstrained
    support with m >= 1: B_mu = 2 rho by the triangle inequality through the
    nominal; B_Sigma must be caller-supplied (no universal bound exists).
    """
    amb = instance.ambiguity
    rho = amb.radius_rho
    if rho == 0.0:
        bm, bs = 0.0, 0.0
    elif isinstance(amb.support, Ellipsoid):
        lam_min = float(np.linalg.eigvalsh(amb.support.M).min())
        if lam_min <= 0:
            raise ValueError("support ellipsoid must be bounded (M positive definite)")
        r = 1.0 / np.sqrt(lam_min)
        bm, bs = 2.0 * r, 2.0 * r * r
    elif isinstance(amb.support, FiniteSupport):
        r = float(np.max(np.linalg.norm(amb.support.points, axis=1)))
        bm, bs = 2.0 * r, 2.0 * r * r
    else:
        bm = 2.0 * rho
        if b_sigma is None:
            raise ValueError(
                "unconstrained support has no universal second-moment bound; supply b_sigma"
            )
        bs = float(b_sigma)
    if b_mu is not None:
        bm = float(b_mu)
    if b_sigma is not None:
        bs = float(b_sigma)
    mu_hat = instance.nominal_moments.mu
    c2 = 2.0 * bm * bm
    c1 = 2.0 * (bs + 2.0 * (bm + float(np.linalg.norm(mu_hat))) ** 2 + bm * bm)
    return RegularityConstants(b_mu=bm, b_sigma=bs, c1=c1, c2=c2)


# --- NDRO problem adapters ------------------------------------------------

class MinVarProblem:
    """Saddle-solver adapter for a minimum-variance instance.

    The objective is V(x, P) + (reg_alpha/2)||x||^2 with the instance's
    explicit regularizer; derivative terms in P are those of the variance.
    """

    def __init__(self, instance: MinVarInstance, alpha: float = 0.0,
                 b_sigma: float | None = None):
        self.instance = instance
        consts = regularity_constants(instance, b_sigma=b_sigma)
        self.constants = consts
        self.c1 = consts.c1
        self.c2 = consts.c2
        self.alpha = alpha + instance.reg_alpha
        self._eta_hint: float | None = None  # warm start for the dual search

    def mix(self, p: MomentState, q: MomentState, gamma: float) -> MomentState:
        return mix_moments(p, q, gamma)

    def inner_min(self, p: MomentState):
        return inner_markowitz(p, self.instance.reg_alpha, self.instance.feasible_x)

    def inner_min_regularized(self, p: MomentState, reg: float):
        return inner_markowitz(p, self.instance.reg_alpha + reg, self.instance.feasible_x)

    def f_value(self, x, p: MomentState) -> float:
        x = np.asarray(x, dtype=float).ravel()
        return variance_risk(x, p) + 0.5 * self.instance.reg_alpha * float(x @ x)

    def f_g_derivative(self, x, p: MomentState, q: MomentState) -> float:
        return variance_risk_g_derivative(x, p, q)

    def oracle_output(self, x, p: MomentState) -> OracleOutput:
        support = self.instance.ambiguity.support
        if isinstance(support, Unconstrained):
            return oracle_unconstrained(x, self.instance, p)
        if isinstance(support, Ellipsoid):
            out = oracle_ellipsoidal(x, self.instance, p, eta_hint=self._eta_hint)
            self._eta_hint = out.eta_star
            return out
        raise ValueError(f"no oracle for support kind {support.kind!r}")

    def fw_oracle_at(self, x, p: MomentState, gamma: float) -> tuple[MomentState, float]:
        out = self.oracle_output(x, p)
        return out.new_moments, out.gap_estimate

    def initial_state(self) -> MomentState:
        return self.instance.nominal_moments


class FixedDecisionProblem:
    """FW-engine adapter maximizing the variance at a fixed portfolio x."""

    def __init__(self, problem: MinVarProblem, x: np.ndarray):
        self.problem = problem
        self.x = np.asarray(x, dtype=float).ravel()
        self._eta_hint: float | None = None

    def mix(self, p: MomentState, q: MomentState, gamma: float) -> MomentState:
        return mix_moments(p, q, gamma)

    def risk_value(self, p: MomentState) -> float:
        return variance_risk(self.x, p)

    def oracle(self, p: MomentState, gamma: float) -> tuple[MomentState, float]:
        support = self.problem.instance.ambiguity.support
        if isinstance(support, Ellipsoid):
            out = oracle_ellipsoidal(
                self.x, self.problem.instance, p, eta_hint=self._eta_hint
            )
            self._eta_hint = out.eta_star
            return out.new_moments, out.gap_estimate
        return self.problem.fw_oracle_at(self.x, p, gamma)


def dual_function_value(problem: MinVarProblem, x: np.ndarray, iters: int) -> float:
    """sup_P V(x, P) estimated by a fixed-x FW run of ``iters`` iterations."""
    fixed = FixedDecisionProblem(problem, x)
    state = problem.initial_state()
    best = fixed.risk_value(state)
    for k in range(iters):
        gamma = 2.0 / (k + 2)
        direction, _ = fixed.oracle(state, gamma)
        state = fixed.mix(state, direction, gamma)
        best = max(best, fixed.risk_value(state))
    return best
