"""Max-min Frank-Wolfe solver for nonlinear DRO and saddle verification."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Generic, Protocol, TypeVar

from .core_fw import gap_threshold, iteration_budget, stepsize

S = TypeVar("S")


class NdroProblem(Protocol[S]):
    """Contract for min_x F(x, P) over a distribution state type S."""

    alpha: float  # strong convexity of F in x (0 when unknown)
    c1: float  # Lipschitz constant of the derivative in x
    c2: float  # uniform smoothness of F_x in P

    def mix(self, p: S, q: S, gamma: float) -> S: ...

    def inner_min(self, p: S):  # -> (x, value)
        ...

    def f_value(self, x, p: S) -> float: ...

    def f_g_derivative(self, x, p: S, q: S) -> float: ...

    def fw_oracle_at(self, x, p: S, gamma: float) -> tuple[S, float]: ...


def ndro_smoothness(alpha: float, c1: float, c2: float) -> float:
    """Smoothness constant C = C2 + C1/(2 alpha) (C1 + sqrt(C1^2 + 4 alpha C2))."""
    if alpha <= 0:
        raise ValueError(
            "alpha must be positive; use the regularized path for non-strongly-convex problems"
        )
    if c1 < 0 or c2 < 0:
        raise ValueError("c1 and c2 must be nonnegative")
    return c2 + c1 / (2.0 * alpha) * (c1 + math.sqrt(c1 * c1 + 4.0 * alpha * c2))


def regularized_smoothness(epsilon: float, b_x: float, c1: float, c2: float) -> float:
    """Smoothness constant of the quadratically regularized problem.

    Equals ndro_smoothness(2 eps / b_x^2, c1, c2).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if b_x <= 0:
        raise ValueError("b_x must be positive")
    return ndro_smoothness(2.0 * epsilon / (b_x * b_x), c1, c2)


def danskin_g_derivative(problem: NdroProblem[S], p: S, q: S) -> float:
    """Derivative of R(P) = min_x F(x, P), evaluated at the inner minimizer."""
    x_p, _ = problem.inner_min(p)
    return problem.f_g_derivative(x_p, p, q)


@dataclass
class SaddleRecord:
    k: int
    gamma: float
    gap_estimate: float
    primal_value: float
    dual_value: float
    time_ms: float


@dataclass
class SaddleResult(Generic[S]):
    x_eps: object
    p_eps: S
    records: list[SaddleRecord] = field(default_factory=list)
    terminated_at: int | None = None
    certificate: float | None = None
    certificate_missed: bool = False
    budget_k: int = 0
    epsilon: float = 0.0

    @property
    def primal_trace(self) -> list[float]:
        return [r.primal_value for r in self.records]

    @property
    def dual_trace(self) -> list[float]:
        return [r.dual_value for r in self.records]

    @property
    def gap_trace(self) -> list[float]:
        return [r.gap_estimate for r in self.records]

    def to_csv(self) -> str:
        lines = ["k,gamma,gap_est,primal_value,dual_value,time_ms"]
        for r in self.records:
            lines.append(
                f"{r.k},{r.gamma:.17g},{r.gap_estimate:.17g},"
                f"{r.primal_value:.17g},{r.dual_value:.17g},{r.time_ms:.3f}"
            )
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        x = self.x_eps
        x_list = list(map(float, x)) if hasattr(x, "__iter__") else float(x)
        return json.dumps(
            {
                "x_eps": x_list,
                "certificate": self.certificate,
                "certificate_missed": self.certificate_missed,
                "epsilon": self.epsilon,
                "iterations": len(self.records),
            }
        )


def run_saddle(
    problem: NdroProblem[S],
    initial: S,
    epsilon: float,
    delta: float = 0.0,
    smoothness_c: float | None = None,
    k_override: int | None = None,
    dual_fn: Callable[[object], float] | None = None,
) -> SaddleResult[S]:
    """Alternate exact inner minimization with FW ascent steps on P.

    First regime: k = 0..K with diminishing steps 2/(k+2).  Second regime:
    k = K+1..2K+1 with constant step 2/(K+2), outputting (x_k, P_k) at the
    first index whose gap estimate passes the termination check.  K comes
    from the iteration budget for (epsilon, smoothness_c, delta) unless
    overridden.  ``dual_fn`` optionally evaluates sup_P F(x_k, P) for the
    trace; it never influences the iteration.
    """
    if k_override is not None:
        budget = k_override
    else:
        if smoothness_c is None:
            c = ndro_smoothness(problem.alpha, problem.c1, problem.c2)
        else:
            c = smoothness_c
        budget = iteration_budget(epsilon, c, delta)
    threshold = gap_threshold(epsilon, delta)

    result: SaddleResult[S] = SaddleResult(
        x_eps=None, p_eps=initial, budget_k=budget, epsilon=epsilon
    )
    p = initial
    x = None
    t0 = time.perf_counter()

    for k in range(2 * budget + 2):
        second_regime = k >= budget + 1
        gamma = stepsize(k, budget if second_regime else None)
        x, primal = problem.inner_min(p)
        direction, gap = problem.fw_oracle_at(x, p, gamma)
        dual = dual_fn(x) if dual_fn is not None else math.nan
        elapsed_ms = (time.perf_counter() - t0) * 1e3
        result.records.append(SaddleRecord(k, gamma, gap, primal, dual, elapsed_ms))

        if second_regime and gap <= threshold:
            result.x_eps = x
            result.p_eps = p
            result.terminated_at = k
            result.certificate = gap
            return result
        p = problem.mix(p, direction, gamma)

    result.x_eps, _ = problem.inner_min(p)
    result.p_eps = p
    result.certificate_missed = True
    return result


class RegularizedProblem(Generic[S]):
    """Wrap F with the strongly convex term (eps / b_x^2) ||x||^2.

    Derivative terms in P are untouched; an eps-saddle of the wrapped problem
    is an eps-saddle of the original whenever ||x|| <= b_x on the feasible
    set.
    """

    def __init__(self, base, epsilon: float, b_x: float):
        if b_x <= 0:
            raise ValueError("b_x must be positive")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.base = base
        self.epsilon = epsilon
        self.b_x = b_x
        self.weight = epsilon / (b_x * b_x)
        self.alpha = 2.0 * epsilon / (b_x * b_x)
        self.c1 = base.c1
        self.c2 = base.c2

    def _penalty(self, x) -> float:
        return self.weight * float(sum(v * v for v in x))

    def mix(self, p: S, q: S, gamma: float) -> S:
        return self.base.mix(p, q, gamma)

    def inner_min(self, p: S):
        x, value = self.base.inner_min_regularized(p, 2.0 * self.weight)
        return x, value

    def f_value(self, x, p: S) -> float:
        return self.base.f_value(x, p) + self._penalty(x)

    def f_g_derivative(self, x, p: S, q: S) -> float:
        return self.base.f_g_derivative(x, p, q)

    def fw_oracle_at(self, x, p: S, gamma: float) -> tuple[S, float]:
        return self.base.fw_oracle_at(x, p, gamma)


def regularize(problem, epsilon: float, b_x: float) -> RegularizedProblem:
    """Strongly convex wrapper; requires ||x|| <= b_x on the feasible set.

    The wrapped inner solve delegates to ``problem.inner_min_regularized(p,
    reg)`` which must minimize F(x, P) + (reg/2) ||x||^2 exactly.
    """
    return RegularizedProblem(problem, epsilon, b_x)


@dataclass
class SaddleReport:
    passed: bool
    sup_value: float
    mid_value: float
    inf_value: float
    sup_slack: float
    inf_slack: float
    epsilon: float


def verify_eps_saddle(
    problem: NdroProblem[S],
    x,
    p: S,
    epsilon: float,
    sup_budget: int,
    slack_tol: float = 1e-9,
) -> SaddleReport:
    """Check the two eps-saddle inequalities for a candidate pair (x, P).

    The sup side is estimated with a dedicated fixed-x FW run of
    ``sup_budget`` diminishing-step iterations; the inf side is an exact
    inner solve.
    """
    best = problem.f_value(x, p)
    state = p
    for k in range(sup_budget):
        gamma = stepsize(k)
        direction, _ = problem.fw_oracle_at(x, state, gamma)
        state = problem.mix(state, direction, gamma)
        best = max(best, problem.f_value(x, state))
    mid = problem.f_value(x, p)
    _, inf_value = problem.inner_min(p)
    sup_slack = mid - (best - epsilon)
    inf_slack = (inf_value + epsilon) - mid
    passed = sup_slack >= -slack_tol and inf_slack >= -slack_tol
    return SaddleReport(
        passed=passed,
        sup_value=best,
        mid_value=mid,
        inf_value=inf_value,
        sup_slack=sup_slack,
        inf_slack=inf_slack,
        epsilon=epsilon,
    )
