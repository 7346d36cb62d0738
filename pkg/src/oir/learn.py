"""Stochastic learners for the OIR and their baselines.

Every learner works episode by episode: roll out K steps with the current
policy, update the moving averages, critics and actor once, and return the
new state together with a log record.  Parameters are tabular softmax logits.

Step sizes follow the experimental convention: ``step_actor`` (alpha, or
eta for the REINFORCE variants) moves the policy and ``step_critic`` (beta)
moves the critics.

Density modes for the entropy signal -log d(s):

* ``"empirical"``  visitation frequencies of the current episode;
* ``"cumulative"`` visitation frequencies accumulated over all episodes;
* ``"exact"``      the model stationary distribution of the current policy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .envs import Environment, Sampler, Trajectory, batch_rollouts
from .errors import ConfigError, DegenerateDenominator, ZeroOccupancy
from .mdp import (
    DEGENERATE_DENOMINATOR,
    SoftmaxPolicy,
    TabularMDP,
    _score_weighted,
    entropy,
    exact_oir_gradient,
    occupancy_stats,
    oir_value,
    relative_values,
    stationary_distribution,
)

DENSITY_MODES = ("empirical", "cumulative", "exact")
MAX_ENTROPY_VARIANTS = ("state_reinforce", "state_ac", "state_action_reinforce", "state_action_ac")
DEFAULT_BOX = 50.0


@dataclass(frozen=True, eq=False)
class CriticFeatures:
    """Linear critic features, v(s) = Phi[s] @ omega."""

    matrix: np.ndarray

    def __post_init__(self):
        phi = np.array(self.matrix, dtype=float)
        if phi.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if np.linalg.matrix_rank(phi) < phi.shape[1]:
            raise ValueError("feature matrix must have full column rank")
        phi.flags.writeable = False
        object.__setattr__(self, "matrix", phi)

    @classmethod
    def tabular(cls, n_states: int) -> "CriticFeatures":
        return cls(np.eye(n_states))

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    def spans_constants(self) -> bool:
        """True when some Phi u equals the all-ones vector (true for tabular features)."""
        ones = np.ones(self.matrix.shape[0])
        u, *_ = np.linalg.lstsq(self.matrix, ones, rcond=None)
        return bool(np.allclose(self.matrix @ u, ones, atol=1e-10))


@dataclass(frozen=True, eq=False)
class LearnerState:
    theta: np.ndarray
    critic_cost: np.ndarray
    critic_entropy: np.ndarray
    ema_cost: float
    ema_entropy: float
    step_actor: float
    step_critic: float
    step_ema: float
    kappa: float = 1.0
    projection_bound: float | None = DEFAULT_BOX
    visit_counts: np.ndarray | None = None
    episode: int = 0

    def __post_init__(self):
        if self.ema_cost <= 0 or self.ema_entropy <= 0:
            raise ValueError("moving averages must start strictly positive")
        if not 0 < self.step_ema <= 1:
            raise ValueError("step_ema must lie in (0, 1]")
        if self.step_actor <= 0 or self.step_critic <= 0:
            raise ValueError("step sizes must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    @classmethod
    def initial(
        cls,
        mdp: TabularMDP,
        *,
        step_actor: float,
        step_critic: float = 1.0,
        step_ema: float = 0.1,
        kappa: float = 1.0,
        features: CriticFeatures | None = None,
        projection_bound: float | None = DEFAULT_BOX,
        theta=None,
        ema_cost: float = 1.0,
        ema_entropy: float = 1.0,
    ) -> "LearnerState":
        """Zero logits (uniform policy) and zero critics unless ``theta`` is given."""
        n_feat = mdp.n_states if features is None else features.n_features
        theta = np.zeros(mdp.n_params) if theta is None else np.array(theta, dtype=float).reshape(-1)
        return cls(
            theta=theta,
            critic_cost=np.zeros(n_feat),
            critic_entropy=np.zeros(n_feat),
            ema_cost=ema_cost,
            ema_entropy=ema_entropy,
            step_actor=step_actor,
            step_critic=step_critic,
            step_ema=step_ema,
            kappa=kappa,
            projection_bound=projection_bound,
        )

    def policy(self, mdp: TabularMDP) -> SoftmaxPolicy:
        return SoftmaxPolicy.from_theta(self.theta, mdp.n_states, mdp.n_actions)


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    emp_cost: float
    emp_entropy: float
    emp_oir: float
    ema_cost: float
    ema_entropy: float
    theta_norm: float


@dataclass
class RunLog:
    seed: int | None = None
    records: list[EpisodeRecord] = field(default_factory=list)
    wall_clock: float = 0.0

    def append(self, record: EpisodeRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def project(theta, bound):
    """Euclidean projection onto the box [-bound, bound]^n (identity if bound is None)."""
    return theta if bound is None else np.clip(theta, -bound, bound)


def score_sum(policy: SoftmaxPolicy, states, actions, weights) -> np.ndarray:
    """sum_i w_i grad log pi(a_i|s_i) for tabular softmax, flattened."""
    S, A = policy.shape
    w_sa = np.bincount(states * A + actions, weights=weights, minlength=S * A).reshape(S, A)
    return _score_weighted(policy, w_sa)


def oir_actor_weights(delta_cost, delta_entropy, mu_cost, mu_entropy, kappa):
    """Per-step OIR gradient weights [dJ (k + muH) - muJ dH] / (k + muH)^2."""
    denom = kappa + mu_entropy
    if denom <= DEGENERATE_DENOMINATOR:
        raise DegenerateDenominator(f"kappa + entropy estimate = {denom:.3e}")
    return (np.asarray(delta_cost) * denom - mu_cost * np.asarray(delta_entropy)) / denom**2


def td_errors(signal, mu, values, states):
    """One-step TD errors along an episode with the value after the last step set to 0."""
    v = values[states]
    v_next = np.append(v[1:-1], 0.0)
    return signal - mu + v_next - v[:-1]


def returns_to_go(x):
    return np.cumsum(x[::-1])[::-1]


def _ema(old, new, tau):
    return (1.0 - tau) * old + tau * new


def _density(state: LearnerState, env_mdp: TabularMDP, policy, visited, mode):
    """Return (d_hat over states, updated visit counts)."""
    if mode == "empirical":
        d = np.bincount(visited, minlength=env_mdp.n_states) / visited.size
        return d, state.visit_counts
    if mode == "cumulative":
        counts = np.zeros(env_mdp.n_states) if state.visit_counts is None else state.visit_counts
        counts = counts + np.bincount(visited, minlength=env_mdp.n_states)
        return counts / counts.sum(), counts
    if mode == "exact":
        return stationary_distribution(env_mdp, policy), state.visit_counts
    raise ValueError(f"density_mode must be one of {DENSITY_MODES}, got {mode!r}")


def _neg_log_density(d, visited):
    dv = d[visited]
    if np.any(dv <= 0):
        raise ZeroOccupancy("a visited state has zero estimated density")
    return -np.log(dv)


def _sampler(env: Environment) -> Sampler:
    cached = getattr(env, "_sampler", None)
    if cached is None or cached.mdp is not env.mdp:
        cached = Sampler(env.mdp)
        object.__setattr__(env, "_sampler", cached)
    return cached


def _record(state: LearnerState, traj: Trajectory, n_states: int) -> EpisodeRecord:
    visited = traj.states[:-1]
    d_hat = np.bincount(visited, minlength=n_states) / visited.size
    cost = float(traj.costs.mean())
    h = entropy(d_hat)
    return EpisodeRecord(
        episode=state.episode,
        emp_cost=cost,
        emp_entropy=h,
        emp_oir=cost / (state.kappa + h) if state.kappa + h > 0 else float("inf"),
        ema_cost=state.ema_cost,
        ema_entropy=state.ema_entropy,
        theta_norm=float(np.linalg.norm(state.theta)),
    )


def _finish(state, theta, traj, n_states, **changes):
    new = replace(
        state,
        theta=project(theta, state.projection_bound),
        episode=state.episode + 1,
        **changes,
    )
    return new, _record(new, traj, n_states)


def id_reinforce_episode(
    state: LearnerState,
    env: Environment,
    K: int,
    density_mode: str = "empirical",
    rng=None,
    estimator: str = "returns",
):
    """One ID-REINFORCE step.

    ``estimator="returns"`` weights each score by the return-to-go of the
    centred per-step OIR signal (a Monte Carlo estimate of the action value);
    ``"immediate"`` weights it by the current step's signal only.
    """
    mdp = env.mdp
    policy = state.policy(mdp)
    traj = _sampler(env).rollout(policy, K, env.start, rng)
    visited = traj.states[:-1]
    d_hat, counts = _density(state, mdp, policy, visited, density_mode)
    h_signal = _neg_log_density(d_hat, visited)

    tau = state.step_ema
    mu_j = _ema(state.ema_cost, traj.costs.mean(), tau)
    mu_h = _ema(state.ema_entropy, h_signal.mean(), tau)
    x = oir_actor_weights(traj.costs - mu_j, h_signal - mu_h, mu_j, mu_h, state.kappa)
    if estimator == "returns":
        x = returns_to_go(x)
    elif estimator != "immediate":
        raise ValueError(f"unknown estimator {estimator!r}")
    grad = score_sum(policy, visited, traj.actions, x) / K
    return _finish(
        state, state.theta - state.step_actor * grad, traj, mdp.n_states,
        ema_cost=mu_j, ema_entropy=mu_h, visit_counts=counts,
    )


def _phi(features, n_states):
    return np.eye(n_states) if features is None else features.matrix


def idac_episode(
    state: LearnerState,
    env: Environment,
    K: int,
    features: CriticFeatures | None = None,
    density_mode: str = "empirical",
    rng=None,
):
    """One IDAC step: cost and entropy critics plus the OIR actor update."""
    mdp = env.mdp
    policy = state.policy(mdp)
    traj = _sampler(env).rollout(policy, K, env.start, rng)
    visited = traj.states[:-1]
    d_hat, counts = _density(state, mdp, policy, visited, density_mode)
    h_signal = _neg_log_density(d_hat, visited)

    tau = state.step_ema
    mu_j = _ema(state.ema_cost, traj.costs.mean(), tau)
    mu_h = _ema(state.ema_entropy, h_signal.mean(), tau)
    phi = _phi(features, mdp.n_states)
    delta_j = td_errors(traj.costs, mu_j, phi @ state.critic_cost, traj.states)
    delta_h = td_errors(h_signal, mu_h, phi @ state.critic_entropy, traj.states)

    beta = state.step_critic
    w_j = state.critic_cost + beta * (phi[visited].T @ delta_j) / K
    w_h = state.critic_entropy + beta * (phi[visited].T @ delta_h) / K
    weights = oir_actor_weights(delta_j, delta_h, mu_j, mu_h, state.kappa)
    grad = score_sum(policy, visited, traj.actions, weights) / K
    return _finish(
        state, state.theta - state.step_actor * grad, traj, mdp.n_states,
        critic_cost=w_j, critic_entropy=w_h, ema_cost=mu_j, ema_entropy=mu_h, visit_counts=counts,
    )


def vanilla_ac_episode(
    state: LearnerState,
    env: Environment,
    K: int,
    features: CriticFeatures | None = None,
    rng=None,
):
    """One step of classic average-cost actor-critic (cost critic only)."""
    mdp = env.mdp
    policy = state.policy(mdp)
    traj = _sampler(env).rollout(policy, K, env.start, rng)
    visited = traj.states[:-1]
    mu_j = _ema(state.ema_cost, traj.costs.mean(), state.step_ema)
    phi = _phi(features, mdp.n_states)
    delta = td_errors(traj.costs, mu_j, phi @ state.critic_cost, traj.states)
    w_j = state.critic_cost + state.step_critic * (phi[visited].T @ delta) / K
    grad = score_sum(policy, visited, traj.actions, delta) / K
    return _finish(
        state, state.theta - state.step_actor * grad, traj, mdp.n_states,
        critic_cost=w_j, ema_cost=mu_j,
    )


def max_entropy_episode(
    state: LearnerState,
    env: Environment,
    K: int,
    variant: str = "state_ac",
    density_mode: str = "empirical",
    rng=None,
    features: CriticFeatures | None = None,
):
    """One ascent step on H(d) (``state_*``) or H(lambda) (``state_action_*``).

    The REINFORCE variants use returns-to-go of the centred shadow reward;
    the actor-critic variants use its TD errors.  Moving average and critic
    live in ``ema_entropy`` and ``critic_entropy``.
    """
    if variant not in MAX_ENTROPY_VARIANTS:
        raise ValueError(f"variant must be one of {MAX_ENTROPY_VARIANTS}")
    mdp = env.mdp
    policy = state.policy(mdp)
    traj = _sampler(env).rollout(policy, K, env.start, rng)
    visited = traj.states[:-1]
    d_hat, counts = _density(state, mdp, policy, visited, density_mode)
    reward = _neg_log_density(d_hat, visited)
    if variant.startswith("state_action"):
        reward = reward - policy.log_probs[visited, traj.actions]
    mu = _ema(state.ema_entropy, reward.mean(), state.step_ema)

    critic = state.critic_entropy
    if variant.endswith("reinforce"):
        weights = returns_to_go(reward - mu)
    else:
        phi = _phi(features, mdp.n_states)
        weights = td_errors(reward, mu, phi @ critic, traj.states)
        critic = critic + state.step_critic * (phi[visited].T @ weights) / K
    grad = score_sum(policy, visited, traj.actions, weights) / K
    return _finish(
        state, state.theta + state.step_actor * grad, traj, mdp.n_states,
        critic_entropy=critic, ema_entropy=mu, visit_counts=counts,
    )


# --- exact-substitution hooks -------------------------------------------------


def expected_update(algorithm: str, mdp: TabularMDP, policy: SoftmaxPolicy, kappa: float = 1.0, step: float = 1.0):
    """Update direction of ``algorithm`` with every sample quantity replaced by its exact value.

    Each state-action pair is weighted by its occupancy, the moving averages
    are the exact J and H, the density is d_theta, and TD errors / returns
    are replaced by exact advantages.  The result runs through the same
    weight and score helpers as the learners, so it tests their assembly.
    """
    stats = occupancy_stats(mdp, policy, kappa)
    d, lam = stats.d, stats.lam
    h_signal = np.broadcast_to(-np.log(d)[:, None], lam.shape)
    adv_j = _advantage(mdp, policy, mdp.cost, d)
    S, A = mdp.n_states, mdp.n_actions
    states = np.repeat(np.arange(S), A)
    actions = np.tile(np.arange(A), S)
    if algorithm in ("idac", "id_reinforce"):
        adv_h = _advantage(mdp, policy, h_signal, d)
        w = oir_actor_weights(adv_j, adv_h, stats.avg_cost, stats.entropy_d, kappa)
        return -step * score_sum(policy, states, actions, (lam * w).reshape(-1))
    if algorithm == "vanilla_ac":
        return -step * score_sum(policy, states, actions, (lam * adv_j).reshape(-1))
    if algorithm == "max_state_entropy":
        adv = _advantage(mdp, policy, h_signal, d)
        return step * score_sum(policy, states, actions, (lam * adv).reshape(-1))
    if algorithm == "max_state_action_entropy":
        adv = _advantage(mdp, policy, h_signal - policy.log_probs, d)
        return step * score_sum(policy, states, actions, (lam * adv).reshape(-1))
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _advantage(mdp, policy, signal, d):
    rv = relative_values(mdp, policy, signal, d=d)
    return rv.action_values - rv.state_values[:, None]


# --- frozen-policy critics -----------------------------------------------------


def critic_fixed_point(mdp: TabularMDP, policy: SoftmaxPolicy, signal, features: CriticFeatures | None = None):
    """Solve Phi^T D [r - g 1 + P Phi w - Phi w] = 0 for the TD(0) limit w.

    ``signal`` is an (S, A) table.  When the features span the constants the
    solution is only unique up to that direction; the minimum-norm solution
    of the projected system is returned and callers should compare
    d-centred values.
    """
    phi = _phi(features, mdp.n_states)
    P = mdp.chain(policy)
    d = stationary_distribution(mdp, policy)
    r = np.sum(policy.probs * np.asarray(signal, dtype=float), axis=1)
    g = d @ r
    D = np.diag(d)
    M = phi.T @ D @ (np.eye(mdp.n_states) - P) @ phi
    rhs = phi.T @ D @ (r - g)
    w, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return w


def centred(values, d):
    values = np.asarray(values, dtype=float)
    return values - d @ values


@dataclass(frozen=True, eq=False)
class FrozenCriticResult:
    critic_cost: np.ndarray
    critic_entropy: np.ndarray
    ema_cost: float
    ema_entropy: float
    iterations: int


def frozen_critic_run(
    mdp: TabularMDP,
    policy: SoftmaxPolicy,
    iterations: int,
    K: int = 200,
    start="uniform",
    features: CriticFeatures | None = None,
    step_critic: float = 1.0,
    step_ema: float = 0.1,
    decay: float = 0.0,
    ema_decay: float | None = None,
    rng=None,
    batch: int = 2000,
) -> FrozenCriticResult:
    """IDAC's cost and entropy critic recursions with the actor switched off.

    The entropy signal uses the exact stationary distribution.  At iteration
    t the critic step is ``step_critic * (t + 1)**-decay`` and the
    moving-average step is ``min(1, step_ema * (t + 1)**-ema_decay)``
    (``ema_decay`` defaults to ``decay``).  Constant steps leave O(step)
    noise; decaying the average faster than the critic also removes the
    correlation between an episode's own mean and its TD errors.
    """
    ema_decay = decay if ema_decay is None else ema_decay
    rng = np.random.default_rng(rng)
    phi = _phi(features, mdp.n_states)
    h_table = -np.log(stationary_distribution(mdp, policy))
    w_j = np.zeros(phi.shape[1])
    w_h = np.zeros(phi.shape[1])
    mu_j = mu_h = 1.0
    t = 0
    while t < iterations:
        n = min(batch, iterations - t)
        trajs = batch_rollouts(mdp, policy, K, n, start, rng)
        for i in range(n):
            scale = (t + 1.0) ** -decay
            tau = min(1.0, step_ema * (t + 1.0) ** -ema_decay)
            states = trajs.states[i]
            visited = states[:-1]
            h_signal = h_table[visited]
            mu_j = _ema(mu_j, trajs.costs[i].mean(), tau)
            mu_h = _ema(mu_h, h_signal.mean(), tau)
            delta_j = td_errors(trajs.costs[i], mu_j, phi @ w_j, states)
            delta_h = td_errors(h_signal, mu_h, phi @ w_h, states)
            w_j = w_j + step_critic * scale * (phi[visited].T @ delta_j) / K
            w_h = w_h + step_critic * scale * (phi[visited].T @ delta_h) / K
            t += 1
    return FrozenCriticResult(w_j, w_h, mu_j, mu_h, iterations)


# --- exact projected gradient descent -----------------------------------------


@dataclass(frozen=True, eq=False)
class ProjectedGDResult:
    thetas: np.ndarray
    rhos: np.ndarray
    rho_star: float | None

    @property
    def gaps(self) -> np.ndarray:
        if self.rho_star is None:
            raise ValueError("no reference optimum supplied")
        return self.rhos - self.rho_star

    @property
    def final_rho(self) -> float:
        return float(self.rhos[-1])


def exact_projected_gd(
    mdp: TabularMDP,
    kappa: float,
    theta0,
    eta: float,
    steps: int,
    box_bound: float | None = DEFAULT_BOX,
    rho_star: float | None = None,
    keep_thetas: bool = True,
) -> ProjectedGDResult:
    """theta <- Proj_box(theta - eta * grad rho(theta)) with exact gradients."""
    S, A = mdp.n_states, mdp.n_actions
    theta = project(np.array(theta0, dtype=float).reshape(-1), box_bound)
    thetas = [theta] if keep_thetas else []
    rhos = [oir_value(mdp, SoftmaxPolicy.from_theta(theta, S, A), kappa)]
    for _ in range(steps):
        policy = SoftmaxPolicy.from_theta(theta, S, A)
        theta = project(theta - eta * exact_oir_gradient(mdp, policy, kappa), box_bound)
        if keep_thetas:
            thetas.append(theta)
        rhos.append(oir_value(mdp, SoftmaxPolicy.from_theta(theta, S, A), kappa))
    return ProjectedGDResult(np.array(thetas), np.array(rhos), rho_star)


# --- training loops ------------------------------------------------------------

ALGORITHMS = (
    "id_reinforce",
    "idac",
    "vanilla_ac",
    "max_state_entropy_reinforce",
    "max_state_entropy_ac",
    "max_state_action_entropy_reinforce",
    "max_state_action_entropy_ac",
)

_MAX_ENT = {
    "max_state_entropy_reinforce": "state_reinforce",
    "max_state_entropy_ac": "state_ac",
    "max_state_action_entropy_reinforce": "state_action_reinforce",
    "max_state_action_entropy_ac": "state_action_ac",
}


def run_episode(algorithm, state, env, K, rng, density_mode="empirical", features=None):
    if algorithm == "idac":
        return idac_episode(state, env, K, features, density_mode, rng)
    if algorithm == "vanilla_ac":
        return vanilla_ac_episode(state, env, K, features, rng)
    if algorithm == "id_reinforce":
        return id_reinforce_episode(state, env, K, density_mode, rng)
    if algorithm in _MAX_ENT:
        return max_entropy_episode(state, env, K, _MAX_ENT[algorithm], density_mode, rng, features)
    raise ConfigError("algorithm", f"unknown algorithm {algorithm!r}")


def train(
    algorithm: str,
    env: Environment,
    state: LearnerState,
    K: int,
    episodes: int,
    seed: int,
    density_mode: str = "empirical",
    features: CriticFeatures | None = None,
):
    """Run ``episodes`` learner steps from ``state``; returns (final state, RunLog)."""
    rng = np.random.default_rng(seed)
    log = RunLog(seed=seed)
    started = time.perf_counter()
    for _ in range(episodes):
        state, record = run_episode(algorithm, state, env, K, rng, density_mode, features)
        log.append(record)
    log.wall_clock = time.perf_counter() - started
    return state, log
