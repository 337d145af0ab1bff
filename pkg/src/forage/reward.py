"""Outcome metric, information-gain reward, efficiency penalty and their aggregate."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

DEFAULT_ALPHA = 0.2
DEFAULT_BETA = 0.95

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")
_ARTICLES = ("a", "an", "the")


class RewardError(ValueError):
    pass


class OutcomeMetric(str, Enum):
    EXACT_MATCH = "em"
    TOKEN_F1 = "f1"


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    outcome_metric: OutcomeMetric = OutcomeMetric.EXACT_MATCH

    def __post_init__(self) -> None:
        # closed endpoints: alpha=0 drops the gain term, beta=1 drops the length discount
        if not 0.0 <= self.alpha < 1.0:
            raise RewardError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise RewardError(f"beta must lie in (0, 1], got {self.beta}")
        object.__setattr__(self, "outcome_metric", OutcomeMetric(self.outcome_metric))


@dataclass(frozen=True)
class RewardBreakdown:
    outcome: float
    gain: float
    efficiency: float
    total: float
    steps_T: int
    curve: tuple[float, ...] = ()

    def to_record(self, task_id: str | None = None) -> dict[str, Any]:
        rec: dict[str, Any] = {} if task_id is None else {"task_id": task_id}
        rec.update(
            outcome=self.outcome,
            gain=self.gain,
            efficiency=self.efficiency,
            total=self.total,
            steps_T=self.steps_T,
            curve=list(self.curve),
        )
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> RewardBreakdown:
        return cls(rec["outcome"], rec["gain"], rec["efficiency"], rec["total"], rec["steps_T"], tuple(rec["curve"]))


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace, drop a leading article."""
    tokens = _PUNCT.sub(" ", text.lower()).split()
    if tokens and tokens[0] in _ARTICLES:
        tokens = tokens[1:]
    return " ".join(tokens)


def exact_match(pred: str, golds: Sequence[str]) -> int:
    norm = normalize_answer(pred)
    return int(any(norm == normalize_answer(g) for g in golds))


def token_f1(pred: str, golds: Sequence[str]) -> float:
    """Best token-level F1 of ``pred`` against any gold answer."""
    pred_toks = normalize_answer(pred).split()
    best = 0.0
    for gold in golds:
        gold_toks = normalize_answer(gold).split()
        if not pred_toks and not gold_toks:
            return 1.0
        common = sum((Counter(pred_toks) & Counter(gold_toks)).values())
        if common == 0:
            continue
        precision = common / len(pred_toks)
        recall = common / len(gold_toks)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def outcome_reward(pred: str, golds: Sequence[str], cfg: RewardConfig = RewardConfig()) -> float:
    if not golds:
        raise RewardError("outcome needs at least one gold answer")
    if cfg.outcome_metric is OutcomeMetric.TOKEN_F1:
        return token_f1(pred, golds)
    return float(exact_match(pred, golds))


def information_gain_reward(curve: Sequence[float]) -> float:
    """Largest cumulative coverage reached; 0 when nothing was retrieved."""
    prev = 0.0
    for t, value in enumerate(curve):
        if not 0.0 <= value <= 1.0:
            raise RewardError(f"coverage {value} at step {t + 1} outside [0, 1]")
        if value < prev:
            raise RewardError(f"coverage curve decreases at step {t + 1}")
        prev = value
    return max(curve, default=0.0)


def efficiency_penalty(T: int, beta: float = DEFAULT_BETA) -> float:
    if T < 1:
        raise RewardError("T must be >= 1")
    return beta ** max(0, T - 2)


def total_reward(
    outcome: float,
    gain: float,
    T: int,
    cfg: RewardConfig = RewardConfig(),
    curve: Sequence[float] = (),
) -> RewardBreakdown:
    eff = efficiency_penalty(T, cfg.beta)
    return RewardBreakdown(outcome, gain, eff, eff * (outcome + cfg.alpha * gain), T, tuple(curve))


def foraging_objective(outcome: float, final_coverage: float, T: int, cfg: RewardConfig = RewardConfig()) -> float:
    """Reporting-only objective ``(S + alpha*C) * beta**T``; training uses :func:`total_reward`."""
    return (outcome + cfg.alpha * final_coverage) * cfg.beta**T


def score_episode(
    pred: str,
    golds: Sequence[str],
    curve: Sequence[float],
    T: int,
    cfg: RewardConfig = RewardConfig(),
) -> RewardBreakdown:
    """Full breakdown for a finished rollout."""
    return total_reward(outcome_reward(pred, golds, cfg), information_gain_reward(curve), T, cfg, curve)
