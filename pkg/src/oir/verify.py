"""Executable checks of the gradient identities, global optimality and rates.

Each check returns plain numbers; the ``*_suite`` functions wrap them into
``CheckReport`` rows for the command line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import build_simple_env
from .learn import DEFAULT_BOX, exact_projected_gd
from .mdp import (
    SoftmaxPolicy,
    TabularMDP,
    average_cost_gradient,
    cross_entropy_gradient,
    entropy_gradient_direct,
    exact_entropy_gradient,
    exact_oir_gradient,
    exact_state_action_entropy_gradient,
    occupancy_stats,
    random_mdp,
    stationary_distribution,
)
from .solve import mesh_oir_minimum, oir_of_lambda, solve_oir

OBJECTIVES = ("entropy_d", "entropy_lambda", "oir", "avg_cost")


@dataclass(frozen=True)
class CheckReport:
    name: str
    instance: str
    metric: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.metric <= self.threshold)

    def row(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<16} {self.instance:<34} {self.metric:.3e} <= {self.threshold:.1e}"


def _objective(name, mdp, kappa):
    """(value(theta), exact_gradient(theta)) for a named objective."""
    S, A = mdp.n_states, mdp.n_actions

    def pol(theta):
        return SoftmaxPolicy.from_theta(theta, S, A)

    if name == "entropy_d":
        return (lambda th: occupancy_stats(mdp, pol(th), kappa).entropy_d,
                lambda th: exact_entropy_gradient(mdp, pol(th)))
    if name == "entropy_lambda":
        return (lambda th: occupancy_stats(mdp, pol(th), kappa).entropy_lambda,
                lambda th: exact_state_action_entropy_gradient(mdp, pol(th)))
    if name == "oir":
        return (lambda th: occupancy_stats(mdp, pol(th), kappa).oir,
                lambda th: exact_oir_gradient(mdp, pol(th), kappa))
    if name == "avg_cost":
        return (lambda th: occupancy_stats(mdp, pol(th), kappa).avg_cost,
                lambda th: average_cost_gradient(mdp, pol(th)))
    raise ValueError(f"objective must be one of {OBJECTIVES} or a (f, grad) pair")


def fd_gradient_check(objective, mdp: TabularMDP | None, theta, h: float = 1e-5, kappa: float = 1.0) -> float:
    """Max over coordinates of |g_i - fd_i| / max(1, |g_i|) with central differences.

    ``objective`` is a name from ``OBJECTIVES`` or a ``(f, grad)`` pair of
    callables on flat parameter vectors (``mdp`` is then ignored).
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError("step h must lie in [1e-8, 1e-4]")
    if isinstance(objective, str):
        f, grad = _objective(objective, mdp, kappa)
    else:
        f, grad = objective
    theta = np.asarray(theta, dtype=float).reshape(-1)
    g = np.asarray(grad(theta), dtype=float)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g))))


def cross_entropy_identity_error(mdp: TabularMDP, theta) -> float:
    """Max abs difference between grad H(d) (implicit differentiation of d)
    and the frozen-reference cross-entropy gradient at the same theta."""
    policy = SoftmaxPolicy.from_theta(theta, mdp.n_states, mdp.n_actions)
    d = stationary_distribution(mdp, policy)
    direct = entropy_gradient_direct(mdp, policy)
    via_ce = cross_entropy_gradient(mdp, policy, d)
    return float(np.max(np.abs(direct - via_ce)))


def smoothness_estimate(mdp: TabularMDP, kappa: float, points, h: float = 1e-5) -> float:
    """Largest |eigenvalue| of the OIR Hessian (differenced exact gradients) over ``points``."""
    S, A = mdp.n_states, mdp.n_actions
    best = 0.0
    for theta in points:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        H = np.empty((theta.size, theta.size))
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            up = exact_oir_gradient(mdp, SoftmaxPolicy.from_theta(theta + e, S, A), kappa)
            dn = exact_oir_gradient(mdp, SoftmaxPolicy.from_theta(theta - e, S, A), kappa)
            H[:, i] = (up - dn) / (2 * h)
        best = max(best, float(np.abs(np.linalg.eigvalsh(0.5 * (H + H.T))).max()))
    return best


def default_step(mdp: TabularMDP, kappa: float, theta0) -> float:
    """Step 1/L with L the local smoothness at theta0 and at the uniform policy."""
    L = smoothness_estimate(mdp, kappa, [theta0, np.zeros(mdp.n_params)])
    return 1.0 / L


@dataclass(frozen=True)
class OptimalityResult:
    final_rhos: np.ndarray
    rho_star: float

    @property
    def spread(self) -> float:
        return float(self.final_rhos.max() - self.final_rhos.min())

    @property
    def gap_to_solver(self) -> float:
        return float(np.max(np.abs(self.final_rhos - self.rho_star)))


def global_optimality_check(
    mdp: TabularMDP,
    kappa: float,
    n_inits: int = 10,
    seed: int = 0,
    steps: int = 2000,
    eta: float | None = None,
    init_scale: float = 1.0,
    rho_star: float | None = None,
) -> OptimalityResult:
    """Exact projected gradient descent from ``n_inits`` random logits."""
    rng = np.random.default_rng(seed)
    if rho_star is None:
        rho_star = solve_oir(mdp, kappa).objective
    finals = []
    for _ in range(n_inits):
        theta0 = rng.normal(0.0, init_scale, mdp.n_params)
        step = default_step(mdp, kappa, theta0) if eta is None else eta
        run = exact_projected_gd(mdp, kappa, theta0, step, steps, DEFAULT_BOX, keep_thetas=False)
        finals.append(run.final_rho)
    return OptimalityResult(np.array(finals), float(rho_star))


@dataclass(frozen=True)
class EnvelopeResult:
    C: float
    violations: int


def rate_envelope_check(gaps, fit_window: int = 10) -> EnvelopeResult:
    """Fit C = max_{t<10} gap_t (t+1); count t >= 10 with gap_t > C/(t+1)."""
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size < 100:
        raise ValueError("need at least 100 gaps")
    t = np.arange(gaps.size)
    C = float(np.max(gaps[:fit_window] * (t[:fit_window] + 1)))
    late = t >= fit_window
    return EnvelopeResult(C, int(np.sum(gaps[late] > C / (t[late] + 1))))


def quasiconvexity_violations(mdp: TabularMDP, kappa: float, n_pairs: int, seed: int = 0, slack: float = 1e-10) -> int:
    """Sample occupancy pairs and count mixtures whose OIR exceeds the larger endpoint."""
    rng = np.random.default_rng(seed)
    S, A = mdp.n_states, mdp.n_actions
    bad = 0
    for _ in range(n_pairs):
        lams = []
        for _ in range(2):
            pol = SoftmaxPolicy(rng.normal(0.0, 2.0, (S, A)))
            lams.append(occupancy_stats(mdp, pol, kappa).lam)
        ends = max(oir_of_lambda(lams[0], mdp.cost, kappa), oir_of_lambda(lams[1], mdp.cost, kappa))
        for w in np.arange(1, 10) / 10:
            if oir_of_lambda(w * lams[0] + (1 - w) * lams[1], mdp.cost, kappa) > ends + slack:
                bad += 1
    return bad


# --- suites --------------------------------------------------------------------

GRADIENT_KAPPAS = (0.1, 1.0, 10.0)


def _random_instance(rng, max_states=5, max_actions=5):
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    return random_mdp(S, A, rng)


def gradient_suite(seed: int = 0, n_instances: int = 100, tol: float = 1e-5) -> list[CheckReport]:
    """100 random MDPs x 3 kappas; each row is the worst objective's FD error."""
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(n_instances):
        mdp = _random_instance(rng)
        theta = rng.normal(0.0, 1.0, mdp.n_params)
        base = max(fd_gradient_check(obj, mdp, theta) for obj in ("entropy_d", "entropy_lambda", "avg_cost"))
        for kappa in GRADIENT_KAPPAS:
            err = max(base, fd_gradient_check("oir", mdp, theta, kappa=kappa))
            desc = f"#{i} {mdp.n_states}x{mdp.n_actions} kappa={kappa:g}"
            reports.append(CheckReport("gradients", desc, err, tol))
    return reports


def optimality_suite(seed: int = 0) -> list[CheckReport]:
    rng = np.random.default_rng(seed)
    reports = []
    simple = build_simple_env()
    res = global_optimality_check(simple, 1.0, n_inits=10, seed=seed)
    reports.append(CheckReport("optimality", "SimpleEnv kappa=1 spread", res.spread, 1e-3))
    reports.append(CheckReport("optimality", "SimpleEnv kappa=1 vs solver", res.gap_to_solver, 1e-3))
    for i in range(3):
        mdp = random_mdp(3, 2, rng)
        mesh_rho, _ = mesh_oir_minimum(mdp, 1.0)
        res = global_optimality_check(mdp, 1.0, n_inits=3, seed=seed + i, rho_star=mesh_rho)
        reports.append(CheckReport("optimality", f"random 3x2 #{i} vs mesh", float(res.final_rhos.max() - mesh_rho), 5e-3))
    return reports


def rate_suite(seed: int = 0, steps: int = 10_000) -> list[CheckReport]:
    mdp = build_simple_env()
    rho_star = solve_oir(mdp, 1.0).objective
    theta0 = np.random.default_rng(seed).normal(0.0, 1.0, mdp.n_params)
    run = exact_projected_gd(mdp, 1.0, theta0, default_step(mdp, 1.0, theta0), steps, rho_star=rho_star, keep_thetas=False)
    env = rate_envelope_check(run.gaps)
    return [CheckReport("rate", f"SimpleEnv kappa=1 C={env.C:.3g}", float(env.violations), 0.0)]


def quasiconvexity_suite(seed: int = 0, n_pairs: int = 1000) -> list[CheckReport]:
    rng = np.random.default_rng(seed)
    mdp = random_mdp(4, 3, rng)
    bad = quasiconvexity_violations(mdp, 1.0, n_pairs, seed=seed)
    return [CheckReport("quasiconvexity", f"random 4x3, {n_pairs} pairs x 9 mixes", float(bad), 0.0)]


SUITES = {
    "gradients": gradient_suite,
    "optimality": optimality_suite,
    "rate": rate_suite,
    "quasiconvexity": quasiconvexity_suite,
}
