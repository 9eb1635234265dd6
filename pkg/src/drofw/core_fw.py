"""Norm-free Frank-Wolfe engine: schedules, budgets, bounds, iteration loop.

The engine touches its problem only through ``mix``, ``risk_value`` and
``oracle``; it has no notion of norms or supports.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Generic, Protocol, TypeVar

S = TypeVar("S")


class FwProblem(Protocol[S]):
    """Contract for a concave maximization problem driven by the engine."""

    def mix(self, p: S, q: S, gamma: float) -> S: ...

    def risk_value(self, p: S) -> float: ...

    def oracle(self, p: S, gamma: float) -> tuple[S, float]:
        """Return an ascent direction and the gap estimate g at ``p``."""
        ...


@dataclass(frozen=True)
class FwConfig:
    smoothness_c: float
    epsilon: float
    oracle_delta: float = 0.0
    k_override: int | None = None

    def __post_init__(self):
        if self.smoothness_c < 0:
            raise ValueError("smoothness_c must be nonnegative")
        if self.oracle_delta < 0:
            raise ValueError("oracle_delta must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k_override is not None and self.k_override < 0:
            raise ValueError("k_override must be nonnegative")


@dataclass
class FwRecord:
    k: int
    gamma: float
    gap_estimate: float
    risk_value: float
    time_ms: float


@dataclass
class FwTrace(Generic[S]):
    records: list[FwRecord] = field(default_factory=list)
    final_state: S | None = None
    terminated_at: int | None = None
    certificate: float | None = None
    certificate_missed: bool = False
    budget_k: int = 0

    def to_csv(self) -> str:
        lines = ["k,gamma,gap_est,risk_value,time_ms"]
        for r in self.records:
            lines.append(
                f"{r.k},{r.gamma:.17g},{r.gap_estimate:.17g},"
                f"{r.risk_value:.17g},{r.time_ms:.3f}"
            )
        return "\n".join(lines) + "\n"


def stepsize(k: int, constant_k: int | None = None) -> float:
    """Diminishing 2/(k+2) schedule, or the constant step 2/(K+2)."""
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    if constant_k is None:
        return 2.0 / (k + 2)
    return 2.0 / (constant_k + 2)


def iteration_budget(epsilon: float, smoothness_c: float, oracle_delta: float = 0.0) -> int:
    """Budget K = ceil(2C(2+3 delta)/eps) - 2, floored at zero."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return max(0, math.ceil(2.0 * smoothness_c * (2.0 + 3.0 * oracle_delta) / epsilon) - 2)


def gap_threshold(epsilon: float, oracle_delta: float = 0.0) -> float:
    """Termination level eps (2+2 delta)/(2+3 delta) for the gap estimate."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return epsilon * (2.0 + 2.0 * oracle_delta) / (2.0 + 3.0 * oracle_delta)


def apriori_bound(k: int, smoothness_c: float, oracle_delta: float = 0.0) -> float:
    """Sub-optimality bound 4C(1+delta)/(k+2), valid for k >= 1."""
    if k < 1:
        raise ValueError("apriori bound is stated for k >= 1")
    return 4.0 * smoothness_c * (1.0 + oracle_delta) / (k + 2)


def run_fw(problem: FwProblem[S], initial: S, config: FwConfig) -> FwTrace[S]:
    """Two-regime Frank-Wolfe loop with gap-based termination.

    Runs k = 0..K-1 with diminishing steps 2/(k+2), then k = K..2K+1 with the
    constant step 2/(K+2); in the second regime it stops at the first k with
    gap estimate <= gap_threshold(epsilon, delta).  If no second-regime index
    passes the check the trace is flagged ``certificate_missed`` (possible
    when smoothness_c underestimates the true constant).
    """
    if config.k_override is not None:
        budget = config.k_override
    else:
        budget = iteration_budget(config.epsilon, config.smoothness_c, config.oracle_delta)
    threshold = gap_threshold(config.epsilon, config.oracle_delta)

    trace: FwTrace[S] = FwTrace(budget_k=budget)
    state = initial
    t0 = time.perf_counter()

    for k in range(2 * budget + 2):
        second_regime = k >= budget
        gamma = stepsize(k, budget if second_regime else None)
        try:
            direction, gap = problem.oracle(state, gamma)
        except Exception as exc:
            raise RuntimeError(f"FW oracle failed at iteration {k}") from exc
        value = problem.risk_value(state)
        if not math.isfinite(value):
            trace.final_state = state
            raise ArithmeticError(
                f"non-finite risk value at iteration {k}; partial trace attached"
            )
        elapsed_ms = (time.perf_counter() - t0) * 1e3
        trace.records.append(FwRecord(k, gamma, gap, value, elapsed_ms))

        if second_regime and gap <= threshold:
            trace.final_state = state
            trace.terminated_at = k
            trace.certificate = gap
            return trace
        state = problem.mix(state, direction, gamma)

    trace.final_state = state
    trace.certificate_missed = True
    return trace
