"""Model-based optimum oracles over the occupancy polytope.

``solve_lp`` finds the classic average-cost optimum through the dual linear
program over state-action occupancy measures.  ``solve_oir`` finds the OIR
optimum by maximising the concave perspective program

    max_{y, t}  kappa t - sum_{s,a} y_sa log(sum_a y_sa / t)
    s.t.        sum y = t,  flow balance on y,  c^T y = 1,  y >= 0

with Frank-Wolfe, using ``DenseSimplex`` as the linear minimisation oracle.
The Frank-Wolfe duality gap at termination certifies global optimality
because the program is concave.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, NonUniqueStationary, SolverStalled
from .mdp import SoftmaxPolicy, TabularMDP, entropy, stationary_distribution
from .simplex import DenseSimplex

log = logging.getLogger(__name__)

GAP_TOL = 1e-8
MAX_ITER = 1_000_000
STEP_CAP = 1.0 - 1e-6


@dataclass(frozen=True, eq=False)
class OccupancyPolytope:
    """``{lam >= 0 : A_eq lam = b_eq}``: normalisation row then one flow row per state."""

    A_eq: np.ndarray
    b_eq: np.ndarray
    n_states: int
    n_actions: int

    @classmethod
    def from_mdp(cls, mdp: TabularMDP) -> "OccupancyPolytope":
        S, A = mdp.n_states, mdp.n_actions
        flow = _flow_rows(mdp)
        A_eq = np.vstack([np.ones((1, S * A)), flow])
        b_eq = np.concatenate([[1.0], np.zeros(S)])
        return cls(A_eq, b_eq, S, A)

    def residual(self, lam) -> float:
        lam = np.asarray(lam, dtype=float).reshape(-1)
        return float(np.max(np.abs(self.A_eq @ lam - self.b_eq)))


def _flow_rows(mdp: TabularMDP) -> np.ndarray:
    """Row s: sum_a lam[s, a] - sum_{s', a} p(s | s', a) lam[s', a]."""
    S, A = mdp.n_states, mdp.n_actions
    out = np.zeros((S, S * A))
    for s in range(S):
        out[s, s * A:(s + 1) * A] += 1.0
    out -= mdp.transition.reshape(S * A, S).T
    return out


@dataclass(frozen=True, eq=False)
class PerspectivePoint:
    y: np.ndarray
    t: float

    @classmethod
    def from_lambda(cls, lam, cost) -> "PerspectivePoint":
        lam = np.asarray(lam, dtype=float).reshape(-1)
        j = float(np.asarray(cost, dtype=float).reshape(-1) @ lam)
        return cls(lam / j, 1.0 / j)

    def to_lambda(self) -> np.ndarray:
        return self.y / self.t


@dataclass(frozen=True, eq=False)
class OccupancySolution:
    lambda_star: np.ndarray
    policy_star: np.ndarray
    objective: float
    iterations: int
    duality_gap: float
    avg_cost: float
    entropy_d: float
    kappa: float | None = None
    perspective: PerspectivePoint | None = None

    @property
    def d_star(self) -> np.ndarray:
        return self.lambda_star.sum(axis=1)


def recover_policy(lam) -> np.ndarray:
    """pi(a|s) = lam[s, a] / sum_a' lam[s, a']; zero-marginal rows become uniform."""
    lam = np.asarray(lam, dtype=float)
    marg = lam.sum(axis=1, keepdims=True)
    pi = np.full_like(lam, 1.0 / lam.shape[1])
    pos = marg[:, 0] > 0
    pi[pos] = lam[pos] / marg[pos]
    return pi


def _solution_from_lambda(lam, cost, kappa, iterations, gap, objective=None, point=None):
    lam = np.clip(np.asarray(lam, dtype=float), 0.0, None)
    lam = lam / lam.sum()
    j = float(np.sum(lam * cost))
    h = entropy(lam.sum(axis=1))
    if objective is None:
        objective = j / (kappa + h)
    return OccupancySolution(
        lambda_star=lam,
        policy_star=recover_policy(lam),
        objective=float(objective),
        iterations=iterations,
        duality_gap=float(gap),
        avg_cost=j,
        entropy_d=h,
        kappa=kappa,
        perspective=point,
    )


def solve_lp(cost, polytope: OccupancyPolytope, start=None) -> OccupancySolution:
    """Optimal basic feasible occupancy for min c^T lam over the polytope.

    ``start`` is an optional feasible occupancy; it replaces simplex phase
    one, which stalls on this highly degenerate system for larger MDPs.
    """
    cost = np.asarray(cost, dtype=float).reshape(-1)
    lp = DenseSimplex(polytope.A_eq, polytope.b_eq, start=start)
    x, value = lp.solve(cost)
    lam = x.reshape(polytope.n_states, polytope.n_actions)
    return OccupancySolution(
        lambda_star=lam,
        policy_star=recover_policy(lam),
        objective=value,
        iterations=lp.pivots,
        duality_gap=0.0,
        avg_cost=value,
        entropy_d=entropy(lam.sum(axis=1)),
    )


def lp_optimum(mdp: TabularMDP) -> OccupancySolution:
    start = _uniform_occupancy(mdp)
    return solve_lp(
        mdp.cost, OccupancyPolytope.from_mdp(mdp), None if start is None else start.reshape(-1)
    )


class PerspectiveProgram:
    """The concave program in z = (y, t) together with its LP oracle."""

    def __init__(self, mdp: TabularMDP, kappa: float):
        self.mdp = mdp
        self.kappa = float(kappa)
        S, A = mdp.n_states, mdp.n_actions
        n = S * A
        rows = [np.concatenate([np.ones(n), [-1.0]])]
        for r in _flow_rows(mdp):
            rows.append(np.concatenate([r, [0.0]]))
        rows.append(np.concatenate([mdp.cost.reshape(-1), [0.0]]))
        self.A_eq = np.array(rows)
        self.b_eq = np.zeros(len(rows))
        self.b_eq[-1] = 1.0
        lam = _uniform_occupancy(mdp)
        start = None
        if lam is not None:
            pt = PerspectivePoint.from_lambda(lam, mdp.cost)
            start = np.concatenate([pt.y, [pt.t]])
        self.oracle = DenseSimplex(self.A_eq, self.b_eq, start=start)

    def marginals(self, z):
        S, A = self.mdp.n_states, self.mdp.n_actions
        return z[:-1].reshape(S, A).sum(axis=1), z[-1]

    def value(self, z) -> float:
        g, t = self.marginals(z)
        nz = g > 0
        return float(self.kappa * t - np.sum(g[nz] * np.log(g[nz] / t)))

    def gradient(self, z) -> np.ndarray:
        g, t = self.marginals(z)
        with np.errstate(divide="ignore"):
            gy = -np.log(g / t) - 1.0
        grad = np.empty_like(z)
        grad[:-1] = np.repeat(gy, self.mdp.n_actions)
        grad[-1] = self.kappa + g.sum() / t
        return grad

    def directional_derivative(self, z, direction) -> float:
        g, t = self.marginals(z)
        dg, dt = self.marginals(direction)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(dg != 0, dg * (-np.log(g / t) - 1.0), 0.0)
        return float(terms.sum() + dt * (self.kappa + g.sum() / t))

    def line_search(self, z, direction, gamma_max) -> float:
        """argmax of the concave f(z + gamma D) on [0, gamma_max] by bisection on f'."""
        if self.directional_derivative(z, direction) <= 0:
            return 0.0
        if self.directional_derivative(z + gamma_max * direction, direction) >= 0:
            return gamma_max
        lo, hi = 0.0, gamma_max
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if self.directional_derivative(z + mid * direction, direction) > 0:
                lo = mid
            else:
                hi = mid
        return lo

    def vertex(self, grad) -> np.ndarray:
        x, _ = self.oracle.solve(-grad)
        return x


def _uniform_occupancy(mdp: TabularMDP):
    """Uniform-policy occupancy, or None when that chain is multichain."""
    pol = SoftmaxPolicy.uniform(mdp.n_states, mdp.n_actions)
    try:
        d = stationary_distribution(mdp, pol)
    except NonUniqueStationary:
        return None
    return d[:, None] * pol.probs


def _start_point(mdp: TabularMDP) -> np.ndarray:
    pol = SoftmaxPolicy.uniform(mdp.n_states, mdp.n_actions)
    d = stationary_distribution(mdp, pol)
    lam = d[:, None] * pol.probs
    pt = PerspectivePoint.from_lambda(lam, mdp.cost)
    return np.concatenate([pt.y, [pt.t]])


def solve_oir(
    mdp: TabularMDP,
    kappa: float,
    tol: float = GAP_TOL,
    max_iter: int = MAX_ITER,
    variant: str = "pairwise",
    stall_window: int = 5000,
) -> OccupancySolution:
    """Global OIR minimiser via Frank-Wolfe on the perspective program.

    ``variant="pairwise"`` (default) moves mass between the LP vertex and
    the worst active atom with an exact line search; ``variant="vanilla"``
    uses the open-loop step 2/(k+2) capped at 1 - 1e-6.  Raises
    SolverStalled if the gap is still above ``tol`` at ``max_iter`` or has
    not improved for ``stall_window`` iterations.
    """
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if variant not in ("pairwise", "vanilla"):
        raise ValueError(f"unknown Frank-Wolfe variant {variant!r}")
    try:
        z0 = _start_point(mdp)
    except NonUniqueStationary as exc:
        raise NonUniqueStationary(
            "solve_oir starts from the uniform-policy occupancy, which must be unique",
            chain=exc.chain,
        ) from exc
    if kappa == 0 and entropy(z0[:-1].reshape(mdp.n_states, -1).sum(axis=1)) == 0:
        raise DegenerateDenominator("kappa = 0 and the occupancy entropy is zero")

    prog = PerspectiveProgram(mdp, kappa)
    atoms = [z0]
    weights = [1.0]
    z = z0.copy()
    best_gap = np.inf
    since_best = 0
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        grad = prog.gradient(z)
        v = prog.vertex(grad)
        gap = float(grad @ (v - z))
        if gap <= tol:
            break
        if gap < best_gap * (1 - 1e-3):
            best_gap, since_best = gap, 0
        else:
            since_best += 1
            if since_best >= stall_window:
                break

        if variant == "vanilla":
            gamma = min(2.0 / (it + 2.0), STEP_CAP)
            z = z + gamma * (v - z)
            continue

        scores = [grad @ a for a in atoms]
        away = int(np.argmin(scores))
        direction = v - atoms[away]
        gamma = prog.line_search(z, direction, weights[away])
        if gamma <= 0:
            # pairwise direction has no ascent; fall back to a plain FW step
            direction = v - z
            gamma = prog.line_search(z, direction, STEP_CAP)
            weights = [w * (1 - gamma) for w in weights]
            _add_atom(atoms, weights, v, gamma)
        else:
            weights[away] -= gamma
            _add_atom(atoms, weights, v, gamma)
        z = z + gamma * direction
        keep = [i for i, w in enumerate(weights) if w > 1e-15]
        atoms = [atoms[i] for i in keep]
        weights = [weights[i] for i in keep]
        z = _recombine(atoms, weights) if it % 1000 == 0 else z

    point = PerspectivePoint(z[:-1].copy(), float(z[-1]))
    lam = point.to_lambda().reshape(mdp.n_states, mdp.n_actions)
    sol = _solution_from_lambda(lam, mdp.cost, kappa, it, gap, point=point)
    log.debug("solve_oir kappa=%g: rho*=%.12g gap=%.2e after %d iterations", kappa, sol.objective, gap, it)
    if gap > tol:
        raise SolverStalled(f"Frank-Wolfe gap {gap:.3e} > {tol:.1e} after {it} iterations", best=sol)
    return sol


def _add_atom(atoms, weights, v, gamma):
    for i, a in enumerate(atoms):
        if np.allclose(a, v, rtol=0, atol=1e-12):
            weights[i] += gamma
            return
    atoms.append(v)
    weights.append(gamma)


def _recombine(atoms, weights):
    w = np.asarray(weights)
    w = w / w.sum()
    return w @ np.asarray(atoms)


@dataclass(frozen=True)
class SweepRow:
    kappa: float
    oir: float
    avg_cost: float
    entropy_d: float
    duality_gap: float


def kappa_sweep(mdp: TabularMDP, kappas, **kwargs) -> list[SweepRow]:
    kappas = [float(k) for k in kappas]
    if kappas != sorted(kappas):
        raise ValueError("kappa list must be sorted ascending")
    rows = []
    for k in kappas:
        sol = solve_oir(mdp, k, **kwargs)
        rows.append(SweepRow(k, sol.objective, sol.avg_cost, sol.entropy_d, sol.duality_gap))
    return rows


def mesh_oir_minimum(mdp: TabularMDP, kappa: float, resolution: float = 1e-3, coarse: float = 0.02, refine_top: int = 3):
    """Brute-force OIR minimum over deterministic meshes of the 2-action policy cube.

    Every occupancy measure of a unichain MDP is induced by a stationary
    policy, so meshing pi(a=0|s) in [0, 1]^S covers the polytope.  A full
    mesh at ``coarse`` spacing is followed by full meshes at ``resolution``
    inside a +-``coarse`` box around the ``refine_top`` best coarse points.
    Returns (best rho, best policy probabilities).
    """
    if mdp.n_actions != 2:
        raise ValueError("mesh oracle supports two-action MDPs only")
    S = mdp.n_states

    def evaluate(grid_axes):
        pts = np.array(list(itertools.product(*grid_axes)))
        return pts, _batch_oir(mdp, pts, kappa)

    axis = np.linspace(0.0, 1.0, int(round(1.0 / coarse)) + 1)
    pts, vals = evaluate([axis] * S)
    order = np.argsort(vals)[:refine_top]
    best_val, best_pt = np.inf, None
    half = int(round(coarse / resolution))
    for idx in order:
        centre = pts[idx]
        axes = []
        for s in range(S):
            k0 = int(round(centre[s] / resolution))
            ks = np.arange(max(0, k0 - half), min(int(round(1 / resolution)), k0 + half) + 1)
            axes.append(ks * resolution)
        fine_pts, fine_vals = evaluate(axes)
        j = int(np.argmin(fine_vals))
        if fine_vals[j] < best_val:
            best_val, best_pt = float(fine_vals[j]), fine_pts[j]
    probs = np.stack([best_pt, 1.0 - best_pt], axis=1)
    return best_val, probs


def _batch_oir(mdp: TabularMDP, pa0, kappa, chunk=20000):
    """OIR of the policies pi(0|s) = pa0[:, s] for a batch of rows."""
    S = mdp.n_states
    p = mdp.transition
    out = np.empty(len(pa0))
    for lo in range(0, len(pa0), chunk):
        q = pa0[lo:lo + chunk]
        pi = np.stack([q, 1.0 - q], axis=2)  # (B, S, 2)
        P = np.einsum("bsa,sat->bst", pi, p)
        M = np.transpose(P, (0, 2, 1)) - np.eye(S)
        M[:, -1, :] = 1.0
        rhs = np.zeros((len(q), S))
        rhs[:, -1] = 1.0
        d = np.linalg.solve(M, rhs[..., None])[..., 0]
        d = np.clip(d, 0.0, None)
        d /= d.sum(axis=1, keepdims=True)
        J = np.einsum("bs,bsa,sa->b", d, pi, mdp.cost)
        with np.errstate(divide="ignore", invalid="ignore"):
            H = -np.sum(np.where(d > 0, d * np.log(d), 0.0), axis=1)
        out[lo:lo + chunk] = J / (kappa + H)
    return out


def oir_of_lambda(lam, cost, kappa) -> float:
    lam = np.asarray(lam, dtype=float)
    return float(np.sum(lam * cost) / (kappa + entropy(lam.sum(axis=1))))


def optimal_policy(sol: OccupancySolution) -> SoftmaxPolicy:
    """Softmax policy approximating ``sol.policy_star`` (log-probabilities as logits)."""
    with np.errstate(divide="ignore"):
        logits = np.log(sol.policy_star)
    return SoftmaxPolicy(np.clip(logits, -50.0, None))
