"""Episodic foraging environment.

The agent alternates between templated search queries and a final answer.
Each search retrieves ``top_k`` documents, appends a ``<search>``/``<info>``
pair to the trajectory and reveals the claims of any of the task's golden
documents it surfaced. Episodes end on an answer; after ``max_steps``
searches only answers are legal.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Sequence

from .corpus import DEFAULT_TOP_K, Corpus, coverage
from .datagen import RELATIONS, Claim, ClaimGraph, Relation, Task
from .reward import RewardBreakdown, RewardConfig, score_episode
from .trajectory import Block, Trajectory, render_blocks, search_step_count, validate_trajectory

DEFAULT_MAX_STEPS = 6


class EnvError(RuntimeError):
    """Contract violation: illegal action, acting on a finished episode, bad setup."""


class OracleInfeasible(EnvError):
    def __init__(self, task_id: str, message: str):
        super().__init__(f"task {task_id}: {message}")
        self.task_id = task_id


@dataclass(frozen=True)
class QueryTemplate:
    template_id: int
    relation: Relation

    def render(self, entity: str) -> str:
        return f"{self.relation.label} {self.relation.verb} {entity}"


TEMPLATES: tuple[QueryTemplate, ...] = tuple(QueryTemplate(i, r) for i, r in enumerate(RELATIONS))
TEMPLATE_BY_LABEL = {t.relation.label: t for t in TEMPLATES}


@dataclass(frozen=True)
class EnvConfig:
    max_steps: int = DEFAULT_MAX_STEPS
    top_k: int = DEFAULT_TOP_K
    reward: RewardConfig = RewardConfig()
    n_templates: int = 12

    def __post_init__(self) -> None:
        if self.max_steps < 1 or self.top_k < 1:
            raise EnvError("max_steps and top_k must be >= 1")
        if not 1 <= self.n_templates <= len(TEMPLATES):
            raise EnvError(f"n_templates must be in [1, {len(TEMPLATES)}]")

    @property
    def templates(self) -> tuple[QueryTemplate, ...]:
        return TEMPLATES[: self.n_templates]


class ActionKind(str, Enum):
    SEARCH = "search"
    ANSWER = "answer"


@dataclass(frozen=True)
class QueryCandidate:
    template_id: int
    entity: str

    @property
    def query(self) -> str:
        return TEMPLATES[self.template_id].render(self.entity)


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    payload: QueryCandidate | str

    @classmethod
    def search(cls, template_id: int, entity: str) -> Action:
        return cls(ActionKind.SEARCH, QueryCandidate(template_id, entity))

    @classmethod
    def answer(cls, entity: str) -> Action:
        return cls(ActionKind.ANSWER, entity)

    @property
    def entity(self) -> str:
        return self.payload.entity if isinstance(self.payload, QueryCandidate) else self.payload

    @property
    def text(self) -> str:
        """Query string for searches, the answer string otherwise."""
        return self.payload.query if isinstance(self.payload, QueryCandidate) else self.payload

    def to_record(self) -> dict[str, Any]:
        if isinstance(self.payload, QueryCandidate):
            payload: Any = {"template_id": self.payload.template_id, "entity": self.payload.entity, "query": self.text}
        else:
            payload = self.payload
        return {"kind": self.kind.value, "payload": payload}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> Action:
        if rec["kind"] == ActionKind.SEARCH.value:
            return cls.search(int(rec["payload"]["template_id"]), rec["payload"]["entity"])
        return cls.answer(rec["payload"])


@dataclass(frozen=True)
class EnvState:
    task: Task = field(repr=False)
    discovered_claims: tuple[Claim, ...] = ()
    discovered_entities: tuple[str, ...] = ()
    issued_queries: frozenset[str] = frozenset()
    queried_entities: frozenset[str] = frozenset()
    retrieved_ids: tuple[frozenset[str], ...] = ()
    blocks: tuple[Block, ...] = ()
    step: int = 0
    done: bool = False

    @property
    def task_id(self) -> str:
        return self.task.task_id

    @property
    def question(self) -> str:
        return self.task.question

    @property
    def coverage_curve(self) -> tuple[float, ...]:
        golden = self.task.golden_set
        seen: set[str] = set()
        curve = []
        for k in self.retrieved_ids:
            seen |= k
            curve.append(coverage(seen, golden))
        return tuple(curve)

    @property
    def coverage(self) -> float:
        curve = self.coverage_curve
        return curve[-1] if curve else 0.0

    @property
    def frontier(self) -> str | None:
        """Farthest entity reachable from the question through discovered claims."""
        starts = self.task.question_entities()
        if not starts:
            return None
        current = starts[0]
        visited = {current}
        by_subject = {c.subject: c for c in self.discovered_claims}
        while current in by_subject and by_subject[current].object not in visited:
            current = by_subject[current].object
            visited.add(current)
        return current

    @property
    def trajectory_text(self) -> str:
        return render_blocks(self.blocks)

    def digest(self) -> str:
        key = repr(
            (
                self.task_id,
                self.step,
                self.discovered_entities,
                sorted(self.issued_queries),
                [sorted(k) for k in self.retrieved_ids],
            )
        )
        return hashlib.sha1(key.encode()).hexdigest()[:16]


@dataclass
class StepRecord:
    state: EnvState
    action: Action
    log_prob: float = 0.0
    value: float = 0.0
    extras: dict[str, Any] = field(default_factory=dict)


@dataclass
class EpisodeRecord:
    task_id: str
    steps: list[StepRecord]
    trajectory: Trajectory
    reward: RewardBreakdown
    final_state: EnvState = field(repr=False, default=None)

    @property
    def final_coverage(self) -> float:
        return self.reward.curve[-1] if self.reward.curve else 0.0

    def sidecar(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "actions": [s.action.to_record() for s in self.steps],
            "log_probs": [s.log_prob for s in self.steps],
            "values": [s.value for s in self.steps],
            "state_digests": [s.state.digest() for s in self.steps],
            "reward": self.reward.to_record(),
        }


def _passage(text: str) -> str:
    for name in ("think", "search", "info", "answer", "evidence"):
        text = text.replace(f"<{name}>", f"({name})").replace(f"</{name}>", f"(/{name})")
    return " ".join(text.split())


def reset(task: Task, corpus: Corpus, cfg: EnvConfig = EnvConfig()) -> EnvState:
    missing = [d for d in task.golden_doc_ids if d not in corpus]
    if missing:
        raise EnvError(f"golden docs {missing} of task {task.task_id} are not in the corpus")
    return EnvState(task=task, discovered_entities=tuple(task.question_entities()))


def legal_actions(state: EnvState, cfg: EnvConfig = EnvConfig()) -> list[Action]:
    """Searches (template id, then entity) followed by answers (entity order)."""
    if state.done:
        raise EnvError("episode is finished")
    entities = sorted(state.discovered_entities)
    actions: list[Action] = []
    if state.step < cfg.max_steps:
        for template in cfg.templates:
            for entity in entities:
                if template.render(entity) not in state.issued_queries:
                    actions.append(Action.search(template.template_id, entity))
    actions.extend(Action.answer(e) for e in entities)
    return actions


def step(
    state: EnvState, action: Action, corpus: Corpus, cfg: EnvConfig = EnvConfig()
) -> tuple[EnvState, Block | None, bool]:
    if action not in legal_actions(state, cfg):
        raise EnvError(f"illegal action {action} at step {state.step}")
    if action.kind is ActionKind.ANSWER:
        new = replace(state, blocks=state.blocks + (Block.answer(action.text),), step=state.step + 1, done=True)
        return new, None, True

    query = action.text
    result = corpus.retrieve(query, cfg.top_k)
    ids = result.doc_ids
    claims = list(state.discovered_claims)
    entities = list(state.discovered_entities)
    by_doc = state.task.claim_by_doc
    for doc_id in ids:
        claim = by_doc.get(doc_id)
        if claim is None or claim in claims:
            continue
        claims.append(claim)
        for e in (claim.subject, claim.object):
            if e not in entities:
                entities.append(e)
    info = Block.info((d, _passage(corpus[d].body)) for d in ids)
    new = replace(
        state,
        discovered_claims=tuple(claims),
        discovered_entities=tuple(entities),
        issued_queries=state.issued_queries | {query},
        queried_entities=state.queried_entities | {action.entity},
        retrieved_ids=state.retrieved_ids + (frozenset(ids),),
        blocks=state.blocks + (Block.search(query), info),
        step=state.step + 1,
    )
    return new, info, False


def finalize_episode(state: EnvState, steps: Sequence[StepRecord], cfg: EnvConfig = EnvConfig()) -> EpisodeRecord:
    if not state.done:
        raise EnvError("episode has not finished")
    traj = Trajectory(state.blocks, state.question)
    validate_trajectory(traj, cfg.max_steps)
    T = search_step_count(traj)
    reward = score_episode(traj.answer, state.task.gold_answers, state.coverage_curve, T, cfg.reward)
    return EpisodeRecord(state.task_id, list(steps), traj, reward, state)


# chooser(state, legal) -> (index, log_prob, value, extras)
Chooser = Callable[[EnvState, list[Action]], tuple[int, float, float, dict[str, Any]]]


def run_episode(task: Task, corpus: Corpus, cfg: EnvConfig, choose: Chooser) -> EpisodeRecord:
    """Roll one episode out with ``choose`` picking from the legal actions."""
    state = reset(task, corpus, cfg)
    steps: list[StepRecord] = []
    while not state.done:
        legal = legal_actions(state, cfg)
        index, log_prob, value, extras = choose(state, legal)
        steps.append(StepRecord(state, legal[index], log_prob, value, extras))
        state, _, _ = step(state, legal[index], corpus, cfg)
    return finalize_episode(state, steps, cfg)


def oracle_actions(task: Task, corpus: Corpus, cfg: EnvConfig = EnvConfig()) -> list[Action]:
    """Expert action sequence: one templated query per hop, then the answer.

    Raises :class:`OracleInfeasible` if a hop's query does not surface its
    golden document within ``top_k``.
    """
    chain = task.hop_chain
    if chain.h > cfg.max_steps:
        raise OracleInfeasible(task.task_id, f"{chain.h} hops exceed max_steps={cfg.max_steps}")
    actions = []
    for claim, doc_id in zip(chain.claims, task.golden_doc_ids):
        template = TEMPLATE_BY_LABEL.get(claim.relation)
        if template is None or template.template_id >= cfg.n_templates:
            raise OracleInfeasible(task.task_id, f"no query template for relation {claim.relation!r}")
        if doc_id not in corpus.retrieve(template.render(claim.subject), cfg.top_k).doc_ids:
            raise OracleInfeasible(task.task_id, f"query for hop {claim.relation!r} misses golden doc {doc_id}")
        actions.append(Action.search(template.template_id, claim.subject))
    actions.append(Action.answer(chain.answer_entity))
    return actions


def oracle_episode(
    task: Task, graph: ClaimGraph | None, corpus: Corpus, cfg: EnvConfig = EnvConfig()
) -> EpisodeRecord:
    """Replay the expert action sequence through the environment."""
    if graph is not None and task.hop_chain not in graph.chains:
        raise EnvError(f"task {task.task_id} was not generated from this graph")
    plan = iter(oracle_actions(task, corpus, cfg))

    def choose(state: EnvState, legal: list[Action]):
        return legal.index(next(plan)), 0.0, 0.0, {}

    return run_episode(task, corpus, cfg, choose)


def infeasible_tasks(tasks: Sequence[Task], corpus: Corpus, cfg: EnvConfig = EnvConfig()) -> list[str]:
    """Ids of tasks the oracle cannot solve under ``cfg``."""
    flagged = []
    for task in tasks:
        try:
            oracle_actions(task, corpus, cfg)
        except OracleInfeasible:
            flagged.append(task.task_id)
    return flagged
