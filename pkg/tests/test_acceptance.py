"""End-to-end acceptance suite.

Nine numbered checks covering derivative correctness, smoothness bounds,
convergence rates, oracle exactness, the saddle-point solver and the seeded
experiment protocol.  Each test prints a single pass/fail verdict line.
"""
import json
import math

import numpy as np
import pytest

from conftest import SimplexQuadraticProblem
from drofw.ambiguity import (
    NORM_L2,
    AmbiguitySpec,
    DiscreteDistribution,
    MomentState,
    Unconstrained,
    mix_moments,
    moments_of,
    perturbation_radius,
)
from drofw.cli import ExperimentConfig, cell_filename, run_experiment
from drofw.core_fw import FwConfig, apriori_bound, run_fw
from drofw.minvar import (
    MinVarInstance,
    MinVarProblem,
    closed_form_saddle,
    eta_star_unconstrained,
    gtrs_subproblem,
    oracle_unconstrained,
    variance_risk,
)
from drofw.risk import (
    EntropicParams,
    FiniteSupportRiskSpec,
    entropic_expectations,
    entropic_g_derivative,
    entropic_spec,
    entropic_value,
    finite_support_g_derivative,
    smoothness_constant,
    variance_g_derivative,
    variance_value,
)
from drofw.saddle import regularize, run_saddle, verify_eps_saddle


def verdict(num: int, label: str, ok: bool, detail: str = "") -> None:
    line = f"[acceptance {num}/9] {label}: {'PASS' if ok else 'FAIL'}"
    if detail and not ok:
        line += f" ({detail})"
    print("\n" + line)
    assert ok, line


def random_moment_state(rng, n=3, atoms=4, radius=1.0) -> MomentState:
    pts = rng.standard_normal((atoms, n))
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    pts = pts / np.maximum(norms, 1.0) * radius
    return moments_of(DiscreteDistribution(pts, rng.dirichlet(np.ones(atoms))))


# --- 1: closed-form derivatives vs finite differences -------------------------

def test_acceptance_1_derivative_correctness():
    rng = np.random.default_rng(1001)
    gamma = 1e-6
    ok = True
    detail = ""

    for _ in range(100):
        p = random_moment_state(rng)
        q = random_moment_state(rng)
        d = variance_g_derivative(p, q)
        fd = (variance_value(mix_moments(p, q, gamma)) - variance_value(p)) / gamma
        if abs(d - fd) > 1e-5 * (1 + abs(d)):
            ok, detail = False, f"variance mismatch {d} vs {fd}"

    theta = np.array([0.5, 1.0, 2.0])
    params = EntropicParams(theta=theta, b_lower=float(np.min(np.exp(-theta))))
    atoms = rng.uniform(0.0, 1.0, size=(5, 3))
    for _ in range(100):
        wp = rng.dirichlet(np.ones(5))
        wq = rng.dirichlet(np.ones(5))
        e_p = entropic_expectations(theta, atoms, wp)
        e_q = entropic_expectations(theta, atoms, wq)
        d = entropic_g_derivative(params, e_p, e_q)
        fd = (entropic_value(params, e_p + gamma * (e_q - e_p))
              - entropic_value(params, e_p)) / gamma
        if abs(d - fd) > 1e-5 * (1 + abs(d)):
            ok, detail = False, f"entropic mismatch {d} vs {fd}"

    root = rng.standard_normal((4, 4))
    b_mat = root @ root.T / 4
    a_vec = rng.standard_normal(4)
    spec = FiniteSupportRiskSpec(
        n_atoms=4,
        value=lambda w: float(a_vec @ w - w @ b_mat @ w),
        gradient=lambda w: a_vec - 2.0 * b_mat @ w,
        beta_prime=2.0 * float(np.linalg.eigvalsh(b_mat).max()),
    )
    for _ in range(100):
        wp = rng.dirichlet(np.ones(4))
        wq = rng.dirichlet(np.ones(4))
        d = finite_support_g_derivative(spec, wp, wq)
        fd = (spec.value(wp + gamma * (wq - wp)) - spec.value(wp)) / gamma
        if abs(d - fd) > 1e-5 * (1 + abs(d)):
            ok, detail = False, f"finite-support mismatch {d} vs {fd}"

    verdict(1, "derivative correctness (300 finite-difference checks)", ok, detail)


# --- 2: norm-free smoothness bound --------------------------------------------

def test_acceptance_2_smoothness_audit():
    rng = np.random.default_rng(1002)
    ok = True
    detail = ""

    # variance over unit-ball supports: mean shift bounded by 2, C = 2 * 2^2
    c_var = 8.0
    for _ in range(1000):
        p = random_moment_state(rng)
        q = random_moment_state(rng)
        gamma = rng.uniform(0.0, 1.0)
        p_gamma = mix_moments(p, q, gamma)
        lhs = variance_g_derivative(p_gamma, p) + variance_g_derivative(p, p_gamma)
        if lhs > gamma ** 2 * c_var + 1e-9:
            ok, detail = False, f"variance smoothness violated: {lhs} vs {gamma**2*c_var}"

    # entropic risk over the box [0,1]^3: exponential moments live in a box
    # whose diagonal bounds the moment-range diameter
    theta = np.array([0.5, 1.0, 2.0])
    params = EntropicParams(theta=theta, b_lower=float(np.min(np.exp(-theta))))
    diameter = float(np.linalg.norm(1.0 - np.exp(-theta)))
    spec = entropic_spec(params, diameter)
    c_ent = smoothness_constant(spec)
    atoms = rng.uniform(0.0, 1.0, size=(5, 3))
    for _ in range(1000):
        e_p = entropic_expectations(theta, atoms, rng.dirichlet(np.ones(5)))
        e_q = entropic_expectations(theta, atoms, rng.dirichlet(np.ones(5)))
        gamma = rng.uniform(0.0, 1.0)
        e_g = e_p + gamma * (e_q - e_p)
        lhs = (entropic_g_derivative(params, e_g, e_p)
               + entropic_g_derivative(params, e_p, e_g))
        if lhs > gamma ** 2 * c_ent + 1e-9:
            ok, detail = False, f"entropic smoothness violated: {lhs} vs {gamma**2*c_ent}"

    verdict(2, "smoothness inequality audit (2000 sampled triples)", ok, detail)


# --- 3: convergence rate and gap certificate ------------------------------------

def simplex_grid_optimum(prob: SimplexQuadraticProblem, steps: int = 100) -> float:
    r = np.arange(steps + 1)
    ii, jj, kk = np.meshgrid(r, r, r, indexing="ij")
    mask = ii + jj + kk <= steps
    pts = np.stack(
        [ii[mask], jj[mask], kk[mask], steps - ii[mask] - jj[mask] - kk[mask]],
        axis=1,
    ) / float(steps)
    vals = pts @ prob.a - np.einsum("ij,jk,ik->i", pts, prob.b, pts)
    return float(vals.max())


def test_acceptance_3_fw_rate_and_certificate():
    rng = np.random.default_rng(1003)
    root = rng.standard_normal((4, 4))
    prob = SimplexQuadraticProblem(rng.standard_normal(4), root @ root.T / 4 + 0.2 * np.eye(4))
    c = prob.smoothness_c
    v_grid = simplex_grid_optimum(prob)
    v_star = prob.optimum()
    ok = abs(v_star - v_grid) <= 1e-3 * (1 + abs(v_star))
    detail = f"grid/solver optimum mismatch: {v_grid} vs {v_star}" if not ok else ""

    start = np.full(4, 0.25)
    trace = run_fw(prob, start, FwConfig(smoothness_c=c, epsilon=1e-12, k_override=200))
    for r in trace.records:
        if 1 <= r.k <= 200:
            subopt = v_star - r.risk_value
            if subopt > apriori_bound(r.k, c) + 1e-9:
                ok, detail = False, f"rate violated at k={r.k}: {subopt}"

    big_k = 30
    trace_k = run_fw(prob, start, FwConfig(smoothness_c=c, epsilon=1e-12, k_override=big_k))
    gaps = [r.gap_estimate for r in trace_k.records if big_k <= r.k <= 2 * big_k + 1]
    bound = 4.0 * c / (big_k + 2)
    if min(gaps) > bound:
        ok, detail = False, f"certificate window missed: {min(gaps)} > {bound}"

    verdict(3, "conditional-gradient rate and gap certificate", ok, detail)


# --- 4: unconstrained-support oracle exactness -----------------------------------

def eta_by_grid(a: float, msq: float, rho: float) -> float:
    lo = a * a * (1.0 + 1e-12)
    hi = a * a + 20.0 * (a / rho) * math.sqrt(msq) + 1.0
    for _ in range(10):
        grid = np.linspace(lo, hi, 4001)
        vals = grid * rho ** 2 + grid / (grid - a * a) * msq
        i = int(np.argmin(vals))
        lo = grid[max(i - 2, 0)]
        hi = grid[min(i + 2, grid.size - 1)]
    return float(0.5 * (lo + hi))


def test_acceptance_4_unconstrained_oracle_exactness():
    rng = np.random.default_rng(1004)
    ok = True
    detail = ""
    for trial in range(50):
        n = int(rng.integers(2, 5))
        big_n = int(rng.integers(2, 7))
        samples = rng.standard_normal((big_n, n))
        rho = float(rng.uniform(0.1, 1.0))
        amb = AmbiguitySpec(2, rho, NORM_L2, Unconstrained(),
                            DiscreteDistribution.uniform(samples))
        inst = MinVarInstance(samples, amb)
        p = inst.nominal_moments
        x = rng.dirichlet(np.ones(n))
        out = oracle_unconstrained(x, inst, p)

        a = float(np.linalg.norm(x))
        msq = float(np.mean((samples @ x - x @ p.mu) ** 2))
        eta_ref = eta_by_grid(a, msq, rho)
        if abs(out.eta_star - eta_ref) > 1e-6 * (1 + abs(out.eta_star)):
            ok, detail = False, f"eta mismatch {out.eta_star} vs grid {eta_ref}"

        dual = out.eta_star * rho ** 2 + out.eta_star / (out.eta_star - a * a) * msq
        primal = variance_risk(x, out.new_moments)
        if abs(primal - dual) > 1e-6 * (1 + abs(primal)):
            ok, detail = False, f"duality gap {primal} vs {dual}"

        if perturbation_radius(out.displacements, 2, NORM_L2) > rho * (1 + 1e-6):
            ok, detail = False, "transport budget exceeded"

    verdict(4, "unconstrained worst-case oracle exactness (50 instances)", ok, detail)


# --- 5: ellipsoidal trust-region subproblem ---------------------------------------

def test_acceptance_5_gtrs_oracle():
    rng = np.random.default_rng(1005)
    thetas = np.linspace(0.0, 2.0 * np.pi, 10001)
    circle = np.vstack([np.cos(thetas), np.sin(thetas)])
    ok = True
    detail = ""
    for _ in range(50):
        x = rng.standard_normal(2)
        v = rng.standard_normal(2) * 0.3
        xi = rng.standard_normal(2) * 0.4
        eta = float(rng.uniform(0.05, 3.0))
        m = np.diag(rng.uniform(0.5, 3.0, size=2))
        rot = np.linalg.qr(rng.standard_normal((2, 2)))[0]
        m = rot @ m @ rot.T
        q, lam, val = gtrs_subproblem(x, eta, xi, v, m)

        def objective(qq):
            return float(
                qq @ np.outer(x, x) @ qq - eta * qq @ qq
                + 2 * qq @ (eta * xi - np.outer(x, x) @ v)
                + (x @ v) ** 2 - eta * xi @ xi
            )

        linv = np.linalg.inv(np.linalg.cholesky(m)).T
        dense = max(objective(b) for b in (linv @ circle).T)
        a_mat = eta * np.eye(2) - np.outer(x, x)
        if np.linalg.eigvalsh(a_mat).min() > 1e-9:
            q_int = np.linalg.solve(a_mat, eta * xi - np.outer(x, x) @ v)
            if q_int @ m @ q_int <= 1.0:
                dense = max(dense, objective(q_int))
        if abs(val - dense) > 1e-4 * (1 + abs(val)):
            ok, detail = False, f"value {val} vs dense search {dense}"
        if q @ m @ q > 1.0 + 1e-8:
            ok, detail = False, "reconstructed point infeasible"

        b = eta * xi - np.outer(x, x) @ v
        c = (x @ v) ** 2 - eta * xi @ xi
        lmi = np.zeros((3, 3))
        lmi[:2, :2] = eta * np.eye(2) - np.outer(x, x) + lam * m
        lmi[:2, 2] = -b
        lmi[2, :2] = -b
        lmi[2, 2] = val - c - lam
        if np.linalg.eigvalsh(0.5 * (lmi + lmi.T)).min() < -1e-7:
            ok, detail = False, "certificate matrix not positive semidefinite"

    verdict(5, "ellipsoidal subproblem vs dense search and its certificate", ok, detail)


# --- 6: saddle points of the analytic case ------------------------------------------

def test_acceptance_6_saddle_verification():
    rng = np.random.default_rng(1006)
    ok = True
    detail = ""
    for trial in range(10):
        samples = rng.standard_normal((10, 5))
        amb = AmbiguitySpec(2, 0.3, NORM_L2, Unconstrained(),
                            DiscreteDistribution.uniform(samples))
        inst = MinVarInstance(samples, amb)
        problem = MinVarProblem(inst, b_sigma=20.0)

        x_star, p_star = closed_form_saddle(inst)
        p_m = moments_of(p_star)
        report = verify_eps_saddle(problem, x_star, p_m, epsilon=1e-3, sup_budget=300)
        if not report.passed:
            ok, detail = False, f"instance {trial}: saddle verification failed"

        reg = regularize(problem, 1e-3, 1.0)
        res = run_saddle(reg, problem.initial_state(), 1e-3, k_override=300)
        v_closed = variance_risk(x_star, p_m)
        v_iter = problem.f_value(res.x_eps, res.p_eps)
        if abs(v_closed - v_iter) > 2e-3:
            ok, detail = False, f"instance {trial}: values {v_closed} vs {v_iter}"

    verdict(6, "analytic saddle points verified and reproduced iteratively", ok, detail)


# --- 7/8: seeded experiment protocol ----------------------------------------------

def read_cell(path):
    lines = path.read_text().strip().split("\n")
    rows = [line.split(",") for line in lines[1:]]
    return {
        "k": [int(r[0]) for r in rows],
        "primal": [float(r[3]) for r in rows],
        "dgap": [float(r[6]) for r in rows],
    }


def run_sweep_twice(tmp_path_factory, tag, **cfg_kw):
    dirs = []
    for rep in ("a", "b"):
        out = tmp_path_factory.mktemp(f"{tag}_{rep}")
        summary = run_experiment(ExperimentConfig(out_dir=str(out), **cfg_kw))
        dirs.append((out, summary))
    return dirs


@pytest.fixture(scope="session")
def radius_sweep(tmp_path_factory):
    return run_sweep_twice(
        tmp_path_factory, "radius_sweep",
        seed=42, rho_list=(0.1, 0.5, 1.0), alpha_list=(0.0,),
    )


@pytest.fixture(scope="session")
def regularizer_sweep(tmp_path_factory):
    return run_sweep_twice(
        tmp_path_factory, "regularizer_sweep",
        seed=1, rho_list=(1.5,), alpha_list=(0.0, 0.1, 1.0),
    )


def test_acceptance_7_radius_sweep(radius_sweep):
    out, summary = radius_sweep[0]
    ok = all(c["status"] == "ok" for c in summary["cells"])
    detail = "a cell failed" if not ok else ""
    for rho in (0.1, 0.5, 1.0):
        cell = read_cell(out / cell_filename(rho, 0.0))
        if not (cell["dgap"][75] <= cell["dgap"][5]):
            ok, detail = False, f"rho={rho}: gap at 75 above gap at 5"
    small = read_cell(out / cell_filename(0.1, 0.0))
    if not (small["dgap"][75] <= 1e-2 * small["dgap"][0]):
        ok, detail = False, "rho=0.1: final gap above 1% of initial"
    verdict(7, "radius sweep protocol (gap decay across cells)", ok, detail)


def test_acceptance_8_regularizer_sweep(regularizer_sweep):
    out, summary = regularizer_sweep[0]
    ok = all(c["status"] == "ok" for c in summary["cells"])
    detail = "a cell failed" if not ok else ""

    strong = read_cell(out / cell_filename(1.5, 1.0))
    final = strong["primal"][-1]
    if abs(strong["primal"][20] - final) > 0.01 * abs(final):
        ok, detail = False, "alpha=1: primal not within 1% of final by iteration 20"

    mild = read_cell(out / cell_filename(1.5, 0.1))
    if not (mild["dgap"][-1] <= strong["dgap"][-1]):
        ok, detail = False, "alpha=0.1 final gap above alpha=1 final gap"

    verdict(8, "regularizer sweep protocol (speed vs gap trade-off)", ok, detail)


# --- 9: determinism -----------------------------------------------------------------

def strip_time_column(text: str) -> str:
    return "\n".join(",".join(line.split(",")[:-1]) for line in text.splitlines())


def test_acceptance_9_determinism(radius_sweep, regularizer_sweep):
    ok = True
    detail = ""

    # oracle and subproblem outputs serialize identically across repeated calls
    rng_a, rng_b = np.random.default_rng(1009), np.random.default_rng(1009)
    for rng_pair in [(rng_a, rng_b)]:
        outs = []
        for rng in rng_pair:
            samples = rng.standard_normal((4, 3))
            amb = AmbiguitySpec(2, 0.4, NORM_L2, Unconstrained(),
                                DiscreteDistribution.uniform(samples))
            inst = MinVarInstance(samples, amb)
            o = oracle_unconstrained(np.array([0.5, 0.3, 0.2]), inst, inst.nominal_moments)
            q, lam, val = gtrs_subproblem(
                np.array([0.3, -0.2]), 1.5, np.array([0.1, 0.2]),
                np.zeros(2), np.eye(2),
            )
            problem = MinVarProblem(inst, b_sigma=20.0)
            reg = regularize(problem, 1e-3, 1.0)
            res = run_saddle(reg, problem.initial_state(), 1e-3, k_override=50)
            outs.append(o.to_json() + repr((q.tolist(), lam, val)) + res.summary_json())
        if outs[0] != outs[1]:
            ok, detail = False, "repeated solver runs serialized differently"

    # experiment CSVs are byte-identical across repeated sweeps (time removed)
    for dirs in (radius_sweep, regularizer_sweep):
        (dir_a, _), (dir_b, _) = dirs
        for path_a in sorted(dir_a.glob("cell_*.csv")):
            path_b = dir_b / path_a.name
            if strip_time_column(path_a.read_text()) != strip_time_column(path_b.read_text()):
                ok, detail = False, f"{path_a.name} differs between repeated sweeps"

    verdict(9, "determinism of repeated seeded runs", ok, detail)
