"""Exact, model-based quantities for tabular average-cost MDPs.

Everything here is a pure function of an immutable ``TabularMDP`` and a
``SoftmaxPolicy``: stationary occupancy measures, long-run average cost,
occupancy entropies, the occupancy information ratio (OIR) and the exact
policy gradients of all of them.

Conventions
-----------
* Parameters are tabular softmax logits, flattened as ``theta[s * A + a]``.
* Entropies are in nats with ``0 log 0 = 0``.
* Relative values solve the average-reward Poisson equation normalised so
  that ``sum_s d(s) V(s) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateDenominator,
    EmptyTrajectory,
    NonUniqueStationary,
    ZeroOccupancy,
)

ROW_SUM_TOL = 1e-12
ZERO_OCCUPANCY = 1e-300
DEGENERATE_DENOMINATOR = 1e-12
# Condition-number guard for the direct stationary solve.
_COND_GUARD = 1e12
_POWER_TOL = 1e-13
_POWER_MAX_ITER = 1_000_000


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite average-cost MDP.

    ``transition[s, a, s']`` is p(s'|s, a) and ``cost[s, a]`` is the strictly
    positive per-step cost.
    """

    transition: np.ndarray
    cost: np.ndarray
    name: str = "mdp"

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        c = np.array(self.cost, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        if c.shape != p.shape[:2]:
            raise ValueError(f"cost must have shape {p.shape[:2]}, got {c.shape}")
        if np.any(p < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if np.max(np.abs(p.sum(axis=2) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("transition rows must sum to 1")
        if not np.all(c > 0):
            raise ValueError("costs must be strictly positive")
        p.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "cost", c)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_states * self.n_actions

    def with_cost(self, cost) -> "TabularMDP":
        return TabularMDP(self.transition, cost, name=self.name)

    def chain(self, policy: "SoftmaxPolicy") -> np.ndarray:
        """State transition matrix P_pi[s, s'] of the policy-induced chain."""
        return np.einsum("sa,sat->st", policy.probs, self.transition)

    def __repr__(self):
        return f"TabularMDP({self.name!r}, S={self.n_states}, A={self.n_actions})"


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Tabular softmax policy, pi(a|s) proportional to exp(logits[s, a])."""

    logits: np.ndarray

    def __post_init__(self):
        z = np.array(self.logits, dtype=float)
        if z.ndim != 2:
            raise ValueError("logits must be a (S, A) array")
        z.flags.writeable = False
        object.__setattr__(self, "logits", z)

    @classmethod
    def from_theta(cls, theta, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.asarray(theta, dtype=float).reshape(n_states, n_actions))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @property
    def theta(self) -> np.ndarray:
        return self.logits.reshape(-1)

    @property
    def shape(self):
        return self.logits.shape

    @cached_property
    def log_probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    @cached_property
    def probs(self) -> np.ndarray:
        p = np.exp(self.log_probs)
        return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class OccupancyStats:
    d: np.ndarray
    lam: np.ndarray
    avg_cost: float
    entropy_d: float
    entropy_lambda: float
    kappa: float

    @property
    def oir(self) -> float:
        return self.avg_cost / (self.kappa + self.entropy_d)


@dataclass(frozen=True, eq=False)
class RelativeValues:
    state_values: np.ndarray
    action_values: np.ndarray
    gain: float


@dataclass(frozen=True, eq=False)
class ShadowMDP:
    """Base dynamics with reward ``-log`` of a frozen occupancy measure.

    ``shadow_reward`` has shape (S,) for the state version and (S, A) for
    the state-action version; ``signal`` always returns the (S, A) table.
    """

    base: TabularMDP
    shadow_reward: np.ndarray = field(repr=False)

    @property
    def signal(self) -> np.ndarray:
        r = self.shadow_reward
        if r.ndim == 1:
            return np.repeat(r[:, None], self.base.n_actions, axis=1)
        return r


def entropy(p) -> float:
    """Shannon entropy in nats with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float).reshape(-1)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def cross_entropy(p, q) -> float:
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(q[nz])))


def chain_stationary(P: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of a row-stochastic matrix.

    Direct solve with one balance row replaced by the normalisation row;
    power iteration on the lazy chain takes over when the system is badly
    conditioned.  Raises NonUniqueStationary when I - P has a null space of
    dimension greater than one.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    sv = np.linalg.svd(np.eye(n) - P, compute_uv=False)
    if sv[-2] <= sv[0] * n * np.finfo(float).eps * 10:
        raise NonUniqueStationary(
            f"chain has more than one recurrent class (sigma_(n-1) = {sv[-2]:.3e})",
            chain=P,
        )
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    d = np.linalg.solve(A, b)
    if np.linalg.cond(A) > _COND_GUARD:
        d = _power_iteration(P, np.clip(d, 0.0, None))
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def _power_iteration(P, d0):
    lazy = 0.5 * (P + np.eye(P.shape[0]))
    d = d0 / d0.sum() if d0.sum() > 0 else np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(_POWER_MAX_ITER):
        nxt = d @ lazy
        if np.max(np.abs(nxt - d)) < _POWER_TOL:
            return nxt
        d = nxt
    return d


def stationary_distribution(mdp: TabularMDP, policy: SoftmaxPolicy) -> np.ndarray:
    return chain_stationary(mdp.chain(policy))


def occupancy_stats(mdp: TabularMDP, policy: SoftmaxPolicy, kappa: float) -> OccupancyStats:
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    d = stationary_distribution(mdp, policy)
    lam = d[:, None] * policy.probs
    h_d = entropy(d)
    if kappa + h_d <= DEGENERATE_DENOMINATOR:
        raise DegenerateDenominator(f"kappa + H(d) = {kappa + h_d:.3e}")
    return OccupancyStats(
        d=d,
        lam=lam,
        avg_cost=float(np.sum(lam * mdp.cost)),
        entropy_d=h_d,
        entropy_lambda=entropy(lam),
        kappa=float(kappa),
    )


def oir_value(mdp: TabularMDP, policy: SoftmaxPolicy, kappa: float) -> float:
    return occupancy_stats(mdp, policy, kappa).oir


def relative_values(mdp: TabularMDP, policy: SoftmaxPolicy, signal, d=None) -> RelativeValues:
    """Solve the Poisson equation of the chain under ``policy`` for ``signal``.

    ``signal`` is an (S, A) per-step cost or reward table.  Uses the
    fundamental matrix (I - P + 1 d^T)^-1, which already enforces d^T V = 0.
    """
    signal = np.asarray(signal, dtype=float)
    P = mdp.chain(policy)
    if d is None:
        d = chain_stationary(P)
    n = mdp.n_states
    sbar = np.sum(policy.probs * signal, axis=1)
    gain = float(d @ sbar)
    Z = np.eye(n) - P + np.outer(np.ones(n), d)
    V = np.linalg.solve(Z, sbar - gain)
    Q = signal - gain + mdp.transition @ V
    return RelativeValues(state_values=V, action_values=Q, gain=gain)


def _score_weighted(policy: SoftmaxPolicy, weights_sa) -> np.ndarray:
    """sum_{s,a} w(s,a) grad log pi(a|s) for tabular softmax, flattened."""
    w = np.asarray(weights_sa, dtype=float)
    g = w - policy.probs * w.sum(axis=1, keepdims=True)
    return g.reshape(-1)


def policy_gradient(mdp: TabularMDP, policy: SoftmaxPolicy, signal, d=None) -> np.ndarray:
    """Exact gradient of the long-run average of ``signal`` (policy gradient theorem).

    sum_s d(s) sum_a pi(a|s) Q(s, a) grad log pi(a|s) with exact relative Q.
    """
    signal = np.asarray(signal, dtype=float)
    if d is None:
        d = stationary_distribution(mdp, policy)
    rv = relative_values(mdp, policy, signal, d=d)
    lam = d[:, None] * policy.probs
    return _score_weighted(policy, lam * rv.action_values)


def _checked_log(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if np.any(d <= ZERO_OCCUPANCY):
        bad = np.flatnonzero(d <= ZERO_OCCUPANCY).tolist()
        raise ZeroOccupancy(f"zero occupancy at states {bad}")
    return np.log(d)


def shadow_mdp(mdp: TabularMDP, reference, state_action: bool = False) -> ShadowMDP:
    """Shadow MDP whose reward is -log of the frozen occupancy ``reference``.

    ``reference`` is a state distribution (S,) or, with ``state_action``,
    a state-action distribution (S, A).
    """
    ref = np.asarray(reference, dtype=float)
    if state_action:
        ref = ref.reshape(mdp.n_states, mdp.n_actions)
    return ShadowMDP(mdp, -_checked_log(ref))


def average_cost_gradient(mdp: TabularMDP, policy: SoftmaxPolicy) -> np.ndarray:
    return policy_gradient(mdp, policy, mdp.cost)


def cross_entropy_gradient(mdp: TabularMDP, policy: SoftmaxPolicy, reference_d) -> np.ndarray:
    """Gradient in theta of CE(d_theta, reference_d) with the reference frozen."""
    return policy_gradient(mdp, policy, shadow_mdp(mdp, reference_d).signal)


def exact_entropy_gradient(mdp: TabularMDP, policy: SoftmaxPolicy) -> np.ndarray:
    """grad H(d_theta) through the shadow MDP with reward -log d_theta(s)."""
    d = stationary_distribution(mdp, policy)
    return policy_gradient(mdp, policy, shadow_mdp(mdp, d).signal, d=d)


def exact_state_action_entropy_gradient(mdp: TabularMDP, policy: SoftmaxPolicy) -> np.ndarray:
    d = stationary_distribution(mdp, policy)
    lam = d[:, None] * policy.probs
    return policy_gradient(mdp, policy, shadow_mdp(mdp, lam, state_action=True).signal, d=d)


def exact_oir_gradient(mdp: TabularMDP, policy: SoftmaxPolicy, kappa: float) -> np.ndarray:
    stats = occupancy_stats(mdp, policy, kappa)
    grad_j = policy_gradient(mdp, policy, mdp.cost, d=stats.d)
    grad_h = policy_gradient(mdp, policy, shadow_mdp(mdp, stats.d).signal, d=stats.d)
    denom = kappa + stats.entropy_d
    return (grad_j * denom - stats.avg_cost * grad_h) / denom**2


def stationary_jacobian(mdp: TabularMDP, policy: SoftmaxPolicy) -> np.ndarray:
    """Jacobian of d_theta w.r.t. theta by implicit differentiation, shape (S, S*A).

    Differentiating d^T (I - P) = 0 gives (dd)^T (I - P) = d^T dP, closed by
    1^T dd = 0.  Independent of the relative-value machinery.
    """
    S, A = mdp.n_states, mdp.n_actions
    pi = policy.probs
    P = mdp.chain(policy)
    d = chain_stationary(P)
    Z = np.eye(S) - P + np.outer(np.ones(S), d)
    Zinv_T = np.linalg.inv(Z).T
    jac = np.zeros((S, S * A))
    for s in range(S):
        for b in range(A):
            # d pi(a|s) / d theta[s, b] = pi(a|s) (1[a=b] - pi(b|s))
            dpi = -pi[s] * pi[s, b]
            dpi[b] += pi[s, b]
            dP_row = dpi @ mdp.transition[s]  # only row s of P changes
            rhs = d[s] * dP_row
            # (dd)^T Z = d^T dP since 1^T dd = 0
            jac[:, s * A + b] = Zinv_T @ rhs
    return jac


def entropy_gradient_direct(mdp: TabularMDP, policy: SoftmaxPolicy) -> np.ndarray:
    """grad H(d_theta) = -sum_s (log d(s) + 1) grad d(s), via ``stationary_jacobian``."""
    d = stationary_distribution(mdp, policy)
    jac = stationary_jacobian(mdp, policy)
    return -(_checked_log(d) + 1.0) @ jac


def empirical_density(states, n_states: int) -> np.ndarray:
    """Visit counts normalised by sequence length."""
    states = np.asarray(states, dtype=int).reshape(-1)
    if states.size == 0:
        raise EmptyTrajectory("cannot estimate a density from an empty sequence")
    return np.bincount(states, minlength=n_states).astype(float) / states.size


def random_mdp(n_states: int, n_actions: int, rng, cost_range=(0.5, 2.0), concentration=1.0) -> TabularMDP:
    """Random MDP with strictly positive transitions (every policy is ergodic)."""
    rng = np.random.default_rng(rng)
    p = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    p = 0.9 * p + 0.1 / n_states
    p /= p.sum(axis=2, keepdims=True)
    cost = rng.uniform(*cost_range, size=(n_states, n_actions))
    return TabularMDP(p, cost, name=f"random-{n_states}x{n_actions}")
