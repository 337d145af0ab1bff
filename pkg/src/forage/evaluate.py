"""Evaluation harness, built-in baselines and report rendering."""

from __future__ import annotations

import csv
import io
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

from .corpus import Corpus, coverage, tokenize
from .datagen import ClaimGraph, Task
from .env import EnvConfig, EnvError, EpisodeRecord, oracle_episode, run_episode
from .policy import PolicyParams, policy_chooser
from .reward import exact_match, score_episode, token_f1
from .trajectory import Block, Trajectory
from .wire import ExternalPolicy, ProtocolError


class EvalError(ValueError):
    pass


class BaselineKind(str, Enum):
    ONE_SHOT_RAG = "rag"
    ORACLE = "oracle"
    RANDOM = "random"


@dataclass(frozen=True)
class EvalRow:
    task_id: str
    em: float = 0.0
    f1: float = 0.0
    steps_T: int = 0
    final_coverage: float = 0.0
    total_reward: float = 0.0
    failed: bool = False
    error: str = ""


@dataclass
class EvalReport:
    policy: str
    rows: list[EvalRow]
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def scored(self) -> list[EvalRow]:
        return [r for r in self.rows if not r.failed]

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.rows)

    def _mean(self, attr: str) -> float:
        rows = self.scored
        return float(np.mean([getattr(r, attr) for r in rows])) if rows else 0.0

    @property
    def em(self) -> float:
        return self._mean("em")

    @property
    def f1(self) -> float:
        return self._mean("f1")

    @property
    def mean_T(self) -> float:
        return self._mean("steps_T")

    @property
    def mean_coverage(self) -> float:
        return self._mean("final_coverage")

    @property
    def mean_reward(self) -> float:
        return self._mean("total_reward")

    def aggregates(self) -> dict[str, float]:
        return {"EM": self.em, "F1": self.f1, "mean_T": self.mean_T, "mean_coverage": self.mean_coverage}


# ---------------------------------------------------------------------------
# one-shot retrieval baseline

_SENTENCE_END = re.compile(r"(?<=\.)\s+")


def _claim_sentence(body: str) -> str:
    return _SENTENCE_END.split(body.strip(), maxsplit=1)[0]


def _sentence_entities(sentence: str) -> list[str]:
    return [w for w in re.findall(r"[^\W_]+", sentence) if w[0].isupper()]


def one_shot_rag_answer(task: Task, corpus: Corpus, k: int = 3) -> str:
    """Retrieve once with the raw question and answer with the best-overlapping entity.

    Candidates are the capitalized names in each retrieved document's claim
    sentence (its first sentence), excluding names the question already
    mentions. Each candidate is scored by how many question tokens its claim
    sentences share; ties go to the lexicographically smallest name.
    """
    if k < 1:
        raise EvalError("k must be >= 1")
    result = corpus.retrieve(task.question, k)
    q_tokens = set(tokenize(task.question))
    scores: dict[str, int] = {}
    for doc_id in result.doc_ids:
        sentence = _claim_sentence(corpus[doc_id].body)
        overlap = len(set(tokenize(sentence)) & q_tokens)
        for name in _sentence_entities(sentence):
            if name.lower() in q_tokens:
                continue
            scores[name] = max(scores.get(name, 0), overlap)
    if not scores:
        return ""
    return min(scores, key=lambda name: (-scores[name], name))


def rag_episode(task: Task, corpus: Corpus, cfg: EnvConfig = EnvConfig()) -> EpisodeRecord:
    """Search(question) -> Info -> Answer, scored like any other rollout."""
    result = corpus.retrieve(task.question, cfg.top_k)
    answer = one_shot_rag_answer(task, corpus, cfg.top_k)
    info = Block.info((d, " ".join(corpus[d].body.split())) for d in result.doc_ids)
    traj = Trajectory((Block.search(task.question), info, Block.answer(answer)), task.question)
    curve = (coverage(result.doc_ids, task.golden_doc_ids),)
    reward = score_episode(answer, task.gold_answers, curve, 2, cfg.reward)
    return EpisodeRecord(task.task_id, [], traj, reward)


# ---------------------------------------------------------------------------
# harness


def random_chooser(seed: int):
    rng = random.Random(seed)

    def choose(state, legal):
        return rng.randrange(len(legal)), 0.0, 0.0, {}

    return choose


Policy = BaselineKind | PolicyParams | ExternalPolicy


def policy_label(policy: Policy) -> str:
    if isinstance(policy, BaselineKind):
        return policy.value
    if isinstance(policy, PolicyParams):
        return "params"
    return "external"


def rollout_task(
    policy: Policy,
    task: Task,
    corpus: Corpus,
    cfg: EnvConfig,
    *,
    seed: int = 0,
    graph: ClaimGraph | None = None,
) -> EpisodeRecord:
    if policy is BaselineKind.ORACLE:
        return oracle_episode(task, graph, corpus, cfg)
    if policy is BaselineKind.ONE_SHOT_RAG:
        return rag_episode(task, corpus, cfg)
    if policy is BaselineKind.RANDOM:
        return run_episode(task, corpus, cfg, random_chooser(_task_seed(seed, task)))
    if isinstance(policy, PolicyParams):
        return run_episode(task, corpus, cfg, policy_chooser(policy, cfg))
    if isinstance(policy, ExternalPolicy):
        return run_episode(task, corpus, cfg, policy.chooser())
    raise EvalError(f"unknown policy {policy!r}")


def _task_seed(seed: int, task: Task) -> int:
    # stable across processes, unlike hash()
    return seed * 1_000_003 + sum(ord(ch) * 31**i for i, ch in enumerate(task.task_id)) % 1_000_003


def row_from_episode(ep: EpisodeRecord, task: Task) -> EvalRow:
    answer = ep.trajectory.answer or ""
    return EvalRow(
        task.task_id,
        em=float(exact_match(answer, task.gold_answers)),
        f1=token_f1(answer, task.gold_answers),
        steps_T=ep.reward.steps_T,
        final_coverage=ep.final_coverage,
        total_reward=ep.reward.total,
    )


def run_policy_eval(
    policy: Policy,
    tasks: Sequence[Task],
    corpus: Corpus,
    cfg: EnvConfig = EnvConfig(),
    *,
    seed: int = 0,
    graph: ClaimGraph | None = None,
    label: str | None = None,
) -> EvalReport:
    """One row per task, ordered by task id; learned policies act greedily.

    Outcome EM is always exact match, independent of the reward's outcome metric.
    """
    rows = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        try:
            ep = rollout_task(policy, task, corpus, cfg, seed=seed, graph=graph)
        except (ProtocolError, EnvError) as exc:
            rows.append(EvalRow(task.task_id, failed=True, error=str(exc)))
            continue
        rows.append(row_from_episode(ep, task))
    config = {
        "alpha": cfg.reward.alpha,
        "beta": cfg.reward.beta,
        "top_k": cfg.top_k,
        "max_steps": cfg.max_steps,
        "seed": seed,
    }
    return EvalReport(label or policy_label(policy), rows, config)


# ---------------------------------------------------------------------------
# rendering

COLUMNS = ("task_id", "em", "f1", "steps_T", "final_coverage", "total_reward", "status")


def _cells(row: EvalRow) -> list[str]:
    return [
        row.task_id,
        f"{row.em:.4f}",
        f"{row.f1:.4f}",
        str(row.steps_T),
        f"{row.final_coverage:.4f}",
        f"{row.total_reward:.4f}",
        "failed" if row.failed else "ok",
    ]


def render_report(report: EvalReport, fmt: str = "table") -> str:
    rows = [_cells(r) for r in sorted(report.rows, key=lambda r: r.task_id)]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "table":
        raise EvalError(f"unknown report format {fmt!r}; use 'table' or 'csv'")
    widths = [max([len(c)] + [len(r[i]) for r in rows]) for i, c in enumerate(COLUMNS)]

    def line(cells: Sequence[str]) -> str:
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    out = [line(COLUMNS)]
    out.extend(line(r) for r in rows)
    if rows:
        agg = report.aggregates()
        config = " ".join(f"{k}={v}" for k, v in report.config.items())
        out.append("")
        out.append(
            f"policy={report.policy} tasks={len(report.scored)} failed={report.n_failed} "
            + " ".join(f"{k}={v:.4f}" for k, v in agg.items())
        )
        if config:
            out.append(f"config: {config}")
    return "\n".join(out) + "\n"
