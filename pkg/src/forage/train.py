"""Behavior cloning warm start and clipped-surrogate PPO with GAE.

Only policy decisions become training samples; retrieved ``<info>`` content
is produced by the environment and never enters a gradient.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .datagen import Task
from .env import EnvConfig, EpisodeRecord, oracle_episode, run_episode
from .policy import PolicyParams, feature_matrix, log_softmax, policy_chooser, value_features
from .reward import RewardConfig

ADV_STD_FLOOR = 1e-8


class TrainError(ValueError):
    pass


class NumericalError(ArithmeticError):
    def __init__(self, index: int, message: str):
        super().__init__(f"sample {index}: {message}")
        self.index = index


class RewardMode(str, Enum):
    TERMINAL_ONLY = "terminal"
    SHAPED_GAIN = "shaped"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 1.0
    lam: float = 0.95
    clip_eps: float = 0.2
    lr_policy: float = 2.0
    lr_value: float = 0.1
    iters: int = 300
    episodes_per_iter: int = 16
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    seed: int = 42
    reward: RewardConfig = RewardConfig()
    reward_mode: RewardMode = RewardMode.TERMINAL_ONLY
    env: EnvConfig | None = None
    bc_steps: int = 50
    bc_episodes: int = 50
    lr_bc: float = 2.0
    normalize_advantages: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise TrainError("gamma must lie in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise TrainError("lam must lie in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise TrainError("clip_eps must lie in (0, 1)")
        if self.iters < 0 or self.episodes_per_iter < 1 or self.bc_steps < 0 or self.bc_episodes < 0:
            raise TrainError("counts must be positive")
        if min(self.lr_policy, self.lr_value, self.lr_bc, self.value_coef, self.entropy_coef) < 0:
            raise TrainError("rates and coefficients must be non-negative")
        object.__setattr__(self, "reward_mode", RewardMode(self.reward_mode))
        env = self.env or EnvConfig()
        # the trainer's reward settings are authoritative for rollouts
        object.__setattr__(self, "env", EnvConfig(env.max_steps, env.top_k, self.reward, env.n_templates))


@dataclass
class StepSample:
    features: np.ndarray  # phi(s, a) of the taken action
    legal_features: np.ndarray  # phi(s, b) for every legal b, rows in action order
    action_index: int
    old_log_prob: float
    reward: float
    value: float
    value_features: np.ndarray
    advantage: float = math.nan
    ret: float = math.nan


# ---------------------------------------------------------------------------
# rewards and advantages


def assign_step_rewards(
    episode: EpisodeRecord, mode: RewardMode = RewardMode.TERMINAL_ONLY, cfg: RewardConfig = RewardConfig()
) -> list[float]:
    """Per-decision rewards whose sum is the episode's total reward in either mode."""
    n = len(episode.steps)
    if n == 0:
        raise TrainError("episode has no steps")
    total = episode.reward.total
    rewards = [0.0] * n
    if RewardMode(mode) is RewardMode.SHAPED_GAIN:
        eff = episode.reward.efficiency
        curve = episode.reward.curve
        prev = 0.0
        for t, value in enumerate(curve):
            rewards[t] = cfg.alpha * eff * (value - prev)
            prev = value
        rewards[-1] = total - math.fsum(rewards[:-1])
    else:
        rewards[-1] = total
    return rewards


def compute_gae(rewards: Sequence[float], values: Sequence[float], gamma: float = 1.0, lam: float = 0.95):
    """Advantages ``A_t = sum_l (gamma*lam)^l delta_{t+l}`` and returns ``A_t + v_t``."""
    if len(rewards) != len(values):
        raise TrainError(f"{len(rewards)} rewards vs {len(values)} values")
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    adv = np.zeros_like(r)
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        next_v = v[t + 1] if t + 1 < len(r) else 0.0
        delta = r[t] + gamma * next_v - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + v


def episode_samples(episode: EpisodeRecord, params: PolicyParams, cfg: TrainConfig) -> list[StepSample]:
    """Training samples for one rollout, advantages filled in."""
    rewards = assign_step_rewards(episode, cfg.reward_mode, cfg.reward)
    samples = []
    for step in episode.steps:
        ex = step.extras
        if "features" in ex:
            phi, index, psi = ex["features"], ex["index"], ex["value_features"]
        else:
            from .env import legal_actions

            legal = legal_actions(step.state, cfg.env)
            phi = feature_matrix(step.state, legal, cfg.env.max_steps)
            index = legal.index(step.action)
            psi = value_features(step.state, cfg.env.max_steps)
        samples.append(StepSample(phi[index], phi, index, step.log_prob, 0.0, float(params.w @ psi), psi))
    adv, ret = compute_gae(rewards, [s.value for s in samples], cfg.gamma, cfg.lam)
    for s, r, a, g in zip(samples, rewards, adv, ret):
        s.reward, s.advantage, s.ret = r, float(a), float(g)
    return samples


def normalize_advantages(samples: Sequence[StepSample]) -> np.ndarray:
    adv = np.array([s.advantage for s in samples])
    return (adv - adv.mean()) / max(float(adv.std()), ADV_STD_FLOOR)


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    policy: float
    value: float
    entropy: float
    clip_fraction: float


def ppo_loss_and_grad(
    samples: Sequence[StepSample],
    params: PolicyParams,
    cfg: TrainConfig = TrainConfig(),
    advantages: np.ndarray | None = None,
    clip_eps: float | None = None,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Clipped-surrogate loss with analytic gradients.

    ``advantages`` defaults to the samples' stored values; pass normalized ones
    for the actual update. ``clip_eps`` overrides the config (``inf`` turns
    the surrogate into the plain policy-gradient objective).
    """
    if not samples:
        raise TrainError("empty batch")
    eps = cfg.clip_eps if clip_eps is None else clip_eps
    adv = np.array([s.advantage for s in samples]) if advantages is None else np.asarray(advantages, dtype=float)
    n = len(samples)
    theta, w = params.theta, params.w
    g_theta = np.zeros_like(theta)
    g_w = np.zeros_like(w)
    surrogate = value_loss = entropy = 0.0
    clipped = 0
    for i, s in enumerate(samples):
        a = adv[i]
        if not math.isfinite(a):
            raise NumericalError(i, "advantage is not finite")
        logp = log_softmax(s.legal_features @ theta)
        probs = np.exp(logp)
        mean_phi = probs @ s.legal_features
        ratio = math.exp(logp[s.action_index] - s.old_log_prob)
        if not math.isfinite(ratio):
            raise NumericalError(i, "probability ratio overflowed")
        unclipped = ratio * a
        clipped_term = min(max(ratio, 1.0 - eps), 1.0 + eps) * a
        if unclipped <= clipped_term:
            surrogate += unclipped
            # d ratio / d theta = ratio * (phi_a - E[phi])
            g_theta -= a * ratio * (s.features - mean_phi)
        else:
            surrogate += clipped_term
            clipped += 1
        h = -float(probs @ logp)
        entropy += h
        if cfg.entropy_coef:
            # dH/dtheta = -sum_b p_b log p_b (phi_b - E[phi])
            g_theta += cfg.entropy_coef * ((probs * logp) @ (s.legal_features - mean_phi))
        v = float(w @ s.value_features)
        err = v - s.ret
        if not math.isfinite(err):
            raise NumericalError(i, "value error is not finite")
        value_loss += err * err
        g_w += cfg.value_coef * 2.0 * err * s.value_features
    policy_loss = -surrogate / n
    value_loss /= n
    entropy /= n
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    return LossBreakdown(total, policy_loss, value_loss, entropy, clipped / n), g_theta / n, g_w / n


def ppo_update(
    params: PolicyParams, episodes: Sequence[EpisodeRecord], cfg: TrainConfig = TrainConfig()
) -> tuple[PolicyParams, LossBreakdown]:
    """One gradient step on a batch of rollouts."""
    if not episodes:
        raise TrainError("empty episode batch")
    samples = [s for ep in episodes for s in episode_samples(ep, params, cfg)]
    adv = normalize_advantages(samples) if cfg.normalize_advantages else None
    loss, g_theta, g_w = ppo_loss_and_grad(samples, params, cfg, adv)
    return PolicyParams(params.theta - cfg.lr_policy * g_theta, params.w - cfg.lr_value * g_w), loss


def bc_loss_and_grad(params: PolicyParams, samples: Sequence[StepSample]) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the taken actions and its gradient in theta."""
    if not samples:
        raise TrainError("no expert decisions")
    nll = 0.0
    grad = np.zeros_like(params.theta)
    for s in samples:
        logp = log_softmax(s.legal_features @ params.theta)
        nll -= logp[s.action_index]
        grad -= s.features - np.exp(logp) @ s.legal_features
    return nll / len(samples), grad / len(samples)


def expert_samples(episodes: Sequence[EpisodeRecord], env: EnvConfig = EnvConfig()) -> list[StepSample]:
    from .env import legal_actions

    samples = []
    for ep in episodes:
        for step in ep.steps:
            legal = legal_actions(step.state, env)
            phi = feature_matrix(step.state, legal, env.max_steps)
            index = legal.index(step.action)
            psi = value_features(step.state, env.max_steps)
            samples.append(StepSample(phi[index], phi, index, 0.0, 0.0, 0.0, psi))
    return samples


def bc_update(
    params: PolicyParams,
    expert: Sequence[EpisodeRecord] | Sequence[StepSample],
    lr: float,
    env: EnvConfig = EnvConfig(),
) -> PolicyParams:
    """One gradient step on the expert negative log-likelihood; ``w`` is untouched."""
    samples = expert if expert and isinstance(expert[0], StepSample) else expert_samples(expert, env)
    _, grad = bc_loss_and_grad(params, samples)
    return PolicyParams(params.theta - lr * grad, params.w)


# ---------------------------------------------------------------------------
# loop


REPORT_COLUMNS = (
    "iter",
    "mean_reward",
    "mean_outcome",
    "mean_gain",
    "mean_T",
    "heldout_em",
    "policy_loss",
    "value_loss",
)


@dataclass
class TrainReport:
    rows: list[dict[str, float]] = field(default_factory=list)
    initial_heldout_em: float | None = None
    initial_heldout_T: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([row["iter"]] + [f"{row[c]:.6f}" for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def iterations_to(self, em: float) -> int | None:
        """First iteration whose held-out EM reaches ``em`` (0 if already there before PPO)."""
        if self.initial_heldout_em is not None and self.initial_heldout_em >= em:
            return 0
        for row in self.rows:
            if row["heldout_em"] >= em:
                return int(row["iter"])
        return None

    def tail_mean(self, column: str, n: int = 50) -> float:
        tail = [row[column] for row in self.rows[-n:]]
        return float(np.mean(tail)) if tail else math.nan


def split_tasks(tasks: Sequence[Task], n_heldout: int, seed: int) -> tuple[list[Task], list[Task]]:
    """Seeded (train, held-out) split."""
    if not 0 <= n_heldout < len(tasks):
        raise TrainError(f"cannot hold out {n_heldout} of {len(tasks)} tasks")
    order = np.random.default_rng(seed).permutation(len(tasks))
    held = sorted(order[:n_heldout].tolist())
    held_set = set(held)
    return [t for i, t in enumerate(tasks) if i not in held_set], [tasks[i] for i in held]


def greedy_eval(params: PolicyParams, tasks: Sequence[Task], corpus: Corpus, env: EnvConfig) -> list[EpisodeRecord]:
    choose = policy_chooser(params, env)
    return [run_episode(t, corpus, env, choose) for t in tasks]


def warm_start(
    params: PolicyParams, tasks: Sequence[Task], corpus: Corpus, cfg: TrainConfig
) -> tuple[PolicyParams, list[EpisodeRecord]]:
    """BC on oracle episodes for the first ``bc_episodes`` tasks."""
    expert = [oracle_episode(t, None, corpus, cfg.env) for t in tasks[: cfg.bc_episodes]]
    samples = expert_samples(expert, cfg.env)
    for _ in range(cfg.bc_steps):
        params = bc_update(params, samples, cfg.lr_bc)
    return params, expert


def train_loop(
    tasks: Sequence[Task],
    corpus: Corpus,
    cfg: TrainConfig = TrainConfig(),
    *,
    heldout: Sequence[Task] = (),
    use_warm_start: bool = True,
    params: PolicyParams | None = None,
    stop_at_em: float | None = None,
) -> tuple[PolicyParams, TrainReport]:
    """Optional BC warm start, then ``cfg.iters`` PPO iterations.

    ``stop_at_em`` ends training early once held-out EM reaches it.
    """
    if not tasks:
        raise TrainError("no training tasks")
    params = PolicyParams.zeros() if params is None else params
    if use_warm_start and cfg.bc_steps and cfg.bc_episodes:
        params, _ = warm_start(params, tasks, corpus, cfg)
    report = TrainReport()
    if heldout:
        evals = greedy_eval(params, heldout, corpus, cfg.env)
        report.initial_heldout_em = float(np.mean([e.reward.outcome for e in evals]))
        report.initial_heldout_T = float(np.mean([e.reward.steps_T for e in evals]))
    rng = np.random.default_rng(cfg.seed)
    for it in range(1, cfg.iters + 1):
        picks = rng.integers(0, len(tasks), size=cfg.episodes_per_iter)
        choose = policy_chooser(params, cfg.env, rng)
        episodes = [run_episode(tasks[i], corpus, cfg.env, choose) for i in picks]
        params, loss = ppo_update(params, episodes, cfg)
        heldout_em = math.nan
        if heldout:
            evals = greedy_eval(params, heldout, corpus, cfg.env)
            heldout_em = float(np.mean([e.reward.outcome for e in evals]))
        report.rows.append(
            {
                "iter": it,
                "mean_reward": float(np.mean([e.reward.total for e in episodes])),
                "mean_outcome": float(np.mean([e.reward.outcome for e in episodes])),
                "mean_gain": float(np.mean([e.reward.gain for e in episodes])),
                "mean_T": float(np.mean([e.reward.steps_T for e in episodes])),
                "heldout_em": heldout_em,
                "policy_loss": loss.policy,
                "value_loss": loss.value,
            }
        )
        if stop_at_em is not None and heldout_em >= stop_at_em:
            break
    return params, report
