"""Log-linear softmax policy and linear value function over environment states.

Action features (fixed order, ``FEATURE_DIM = 8``):

====  ===============================================================
idx   meaning
====  ===============================================================
0     bias
1     1 for a search, 0 for an answer
2     fraction of query tokens that occur in the question (search only)
3     fraction of query tokens that occur in discovered claims (search only)
4     query entity discovered but not yet queried (search only)
5     step / max_steps (answer only)
6     answer entity equals the current frontier entity (answer only)
7     cumulative coverage so far (answer only)
====  ===============================================================

State-only features ``1, 2`` and ``7`` are attached to one action kind; a
feature shared by every legal action would cancel inside the softmax.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .corpus import tokenize
from .env import Action, ActionKind, Chooser, EnvConfig, EnvState

FEATURE_DIM = 8
VALUE_DIM = 4
FEATURE_VERSION = 1

FEATURE_NAMES = (
    "bias",
    "is_search",
    "question_overlap",
    "claim_overlap",
    "novel_entity",
    "step_fraction",
    "answer_is_frontier",
    "coverage",
)
VALUE_FEATURE_NAMES = ("bias", "step_fraction", "coverage", "entity_fraction")


class PolicyError(ValueError):
    pass


@lru_cache(maxsize=65536)
def _tokens(text: str) -> frozenset[str]:
    return frozenset(tokenize(text))


def _state_context(state: EnvState) -> tuple[frozenset[str], frozenset[str]]:
    claim_tokens: set[str] = set()
    for c in state.discovered_claims:
        claim_tokens |= _tokens(f"{c.subject} {c.relation} {c.object}")
    return _tokens(state.question), frozenset(claim_tokens)


def _overlap(tokens: frozenset[str], other: frozenset[str]) -> float:
    return len(tokens & other) / len(tokens) if tokens else 0.0


def featurize(state: EnvState, action: Action, max_steps: int = EnvConfig().max_steps) -> np.ndarray:
    return feature_matrix(state, [action], max_steps)[0]


def feature_matrix(state: EnvState, actions: Sequence[Action], max_steps: int = EnvConfig().max_steps) -> np.ndarray:
    """Rows of :func:`featurize` for every action, sharing the per-state work."""
    q_tokens, c_tokens = _state_context(state)
    frontier = state.frontier
    coverage = state.coverage
    step_frac = state.step / max_steps
    phi = np.zeros((len(actions), FEATURE_DIM))
    phi[:, 0] = 1.0
    for i, action in enumerate(actions):
        if action.kind is ActionKind.SEARCH:
            toks = _tokens(action.text)
            phi[i, 1] = 1.0
            phi[i, 2] = _overlap(toks, q_tokens)
            phi[i, 3] = _overlap(toks, c_tokens)
            phi[i, 4] = float(action.entity not in state.queried_entities)
        else:
            phi[i, 5] = step_frac
            phi[i, 6] = float(action.entity == frontier)
            phi[i, 7] = coverage
    return phi


def value_features(state: EnvState, max_steps: int = EnvConfig().max_steps) -> np.ndarray:
    return np.array(
        [1.0, state.step / max_steps, state.coverage, len(state.discovered_entities) / (max_steps + 1)]
    )


@dataclass(frozen=True)
class PolicyParams:
    theta: np.ndarray
    w: np.ndarray

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=float)
        w = np.array(self.w, dtype=float)
        theta.setflags(write=False)
        w.setflags(write=False)
        if theta.shape != (FEATURE_DIM,) or w.shape != (VALUE_DIM,):
            raise PolicyError(f"expected theta[{FEATURE_DIM}] and w[{VALUE_DIM}], got {theta.shape} and {w.shape}")
        if not (np.isfinite(theta).all() and np.isfinite(w).all()):
            raise PolicyError("parameters must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "w", w)

    @classmethod
    def zeros(cls) -> PolicyParams:
        return cls(np.zeros(FEATURE_DIM), np.zeros(VALUE_DIM))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return bool(np.array_equal(self.theta, other.theta) and np.array_equal(self.w, other.w))

    def to_record(self) -> dict[str, Any]:
        return {"theta": self.theta.tolist(), "w": self.w.tolist(), "feature_version": FEATURE_VERSION}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> PolicyParams:
        version = rec.get("feature_version")
        if version != FEATURE_VERSION:
            raise PolicyError(f"params were trained with feature_version {version}, this build uses {FEATURE_VERSION}")
        return cls(rec["theta"], rec["w"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_record(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> PolicyParams:
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ActionDistribution:
    actions: tuple[Action, ...]
    probs: np.ndarray
    log_probs: np.ndarray
    features: np.ndarray

    @property
    def entropy(self) -> float:
        return float(-(self.probs * self.log_probs).sum())

    def argmax(self) -> int:
        return int(np.argmax(self.log_probs))


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    return shifted - math.log(np.exp(shifted).sum())


def distribution_from_features(theta: np.ndarray, phi: np.ndarray, actions: Sequence[Action] = ()) -> ActionDistribution:
    if len(phi) == 0:
        raise PolicyError("no legal actions")
    log_probs = log_softmax(phi @ theta)
    return ActionDistribution(tuple(actions), np.exp(log_probs), log_probs, phi)


def action_distribution(
    params: PolicyParams,
    state: EnvState,
    legal: Sequence[Action],
    max_steps: int = EnvConfig().max_steps,
) -> ActionDistribution:
    if not legal:
        raise PolicyError("no legal actions")
    return distribution_from_features(params.theta, feature_matrix(state, legal, max_steps), legal)


class UniformSource(Protocol):
    def random(self) -> float: ...


def sample_index(probs: np.ndarray, rng: UniformSource) -> int:
    """Inverse-CDF draw over the given (deterministic) action order."""
    u = rng.random()
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(index, len(probs) - 1)


def sample_action(dist: ActionDistribution, rng: UniformSource) -> tuple[Action, float]:
    i = sample_index(dist.probs, rng)
    return dist.actions[i], float(dist.log_probs[i])


def value_estimate(params: PolicyParams, state: EnvState, max_steps: int = EnvConfig().max_steps) -> float:
    return float(params.w @ value_features(state, max_steps))


def policy_chooser(params: PolicyParams, cfg: EnvConfig = EnvConfig(), rng: UniformSource | None = None) -> Chooser:
    """Sampling chooser when ``rng`` is given, greedy (first argmax) otherwise.

    Extras carry what the trainer needs to recompute log-probabilities.
    """

    def choose(state: EnvState, legal: list[Action]):
        phi = feature_matrix(state, legal, cfg.max_steps)
        dist = distribution_from_features(params.theta, phi, legal)
        index = dist.argmax() if rng is None else sample_index(dist.probs, rng)
        psi = value_features(state, cfg.max_steps)
        extras = {"features": phi, "index": index, "value_features": psi}
        return index, float(dist.log_probs[index]), float(params.w @ psi), extras

    return choose
