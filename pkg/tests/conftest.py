"""Shared test problems."""
from __future__ import annotations

import numpy as np


class SimplexQuadraticProblem:
    """Concave quadratic a.p - p^T B p maximized over simplex weights.

    State is the weight vector itself; the oracle returns the best vertex.
    The exact curvature constant is 4 lambda_max(B) since the simplex has
    Euclidean diameter sqrt(2).
    """

    def __init__(self, a: np.ndarray, b: np.ndarray):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    @property
    def smoothness_c(self) -> float:
        return 4.0 * float(np.linalg.eigvalsh(self.b).max())

    def risk_value(self, p: np.ndarray) -> float:
        return float(self.a @ p - p @ self.b @ p)

    def gradient(self, p: np.ndarray) -> np.ndarray:
        return self.a - 2.0 * self.b @ p

    def mix(self, p: np.ndarray, q: np.ndarray, gamma: float) -> np.ndarray:
        return p + gamma * (q - p)

    def oracle(self, p: np.ndarray, gamma: float):
        g = self.gradient(p)
        j = int(np.argmax(g))
        direction = np.zeros_like(p)
        direction[j] = 1.0
        gap = float(g[j] - g @ p)
        return direction, gap

    def optimum(self, tol: float = 1e-12, max_iter: int = 200_000) -> float:
        """Accelerated projected gradient on the negated objective."""
        from drofw.minvar import project_simplex

        n = self.a.size
        lip = 2.0 * float(np.linalg.eigvalsh(self.b).max()) + 1e-12
        x = np.full(n, 1.0 / n)
        z = x.copy()
        t = 1.0
        for _ in range(max_iter):
            g = -self.gradient(z)
            x_new = project_simplex(z - g / lip)
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
            x, t = x_new, t_new
            gx = -self.gradient(x)
            if np.linalg.norm(x - project_simplex(x - gx)) <= tol:
                break
        return self.risk_value(x)


def random_simplex_quadratic(rng: np.random.Generator, n: int = 4) -> SimplexQuadraticProblem:
    root = rng.standard_normal((n, n))
    b = root @ root.T / n + 0.2 * np.eye(n)
    a = rng.standard_normal(n)
    return SimplexQuadraticProblem(a, b)
