"""Synthetic multi-hop tasks over a seeded claim graph.

Each task plants a chain of ``h`` claims ``E0 -r1-> E1 -r2-> ... -rh-> Eh``.
Every claim gets its own golden document; distractor documents verbalize
off-chain claims attached to the same entities. The question names only
``E0`` and the relation labels, while documents use a disjoint verb
vocabulary, so the last golden document shares no token with the question
and one-shot retrieval on the question cannot reach it.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Corpus, Document, save_corpus, tokenize


class GenerationError(RuntimeError):
    pass


class VerificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Relation:
    label: str  # used in questions
    verb: str  # used in documents


RELATIONS: tuple[Relation, ...] = (
    Relation("mentor", "mentored"),
    Relation("founder", "founded"),
    Relation("rival", "rivaled"),
    Relation("partner", "partnered"),
    Relation("successor", "succeeded"),
    Relation("sponsor", "sponsored"),
    Relation("employer", "employed"),
    Relation("owner", "owned"),
    Relation("teacher", "taught"),
    Relation("patron", "funded"),
    Relation("ally", "allied"),
    Relation("heir", "inherited"),
    Relation("designer", "designed"),
    Relation("host", "hosted"),
    Relation("editor", "edited"),
    Relation("captain", "captained"),
    Relation("coach", "coached"),
    Relation("publisher", "published"),
    Relation("neighbor", "bordered"),
    Relation("author", "wrote"),
)
RELATION_BY_LABEL = {r.label: r for r in RELATIONS}

QUESTION_TEMPLATES = (
    "Starting from {start}, follow {path}: which entity is reached?",
    "Which entity is reached from {start} by following {path}?",
)
PATH_JOINER = ", then "

FILLERS = (
    "Regional archives preserve this account.",
    "Contemporary ledgers mention it briefly.",
    "Historians consider the record reliable.",
    "Several chronicles repeat the same detail.",
    "Local newsletters covered it at length.",
    "An old almanac lists this fact.",
    "Museum catalogues keep a copy.",
    "Later biographies cite this note.",
)

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()
_CODAS = ["", "", "n", "r", "s", "x"]


def question_vocabulary() -> set[str]:
    words = set()
    for template in QUESTION_TEMPLATES:
        words.update(tokenize(template.format(start="", path=PATH_JOINER)))
    words.update(r.label for r in RELATIONS)
    return words


def document_vocabulary() -> set[str]:
    words = {r.verb for r in RELATIONS}
    for sentence in FILLERS:
        words.update(tokenize(sentence))
    return words


@dataclass(frozen=True)
class Claim:
    subject: str
    relation: str
    object: str

    def as_list(self) -> list[str]:
        return [self.subject, self.relation, self.object]


@dataclass(frozen=True)
class HopChain:
    claims: tuple[Claim, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "claims", tuple(self.claims))

    @property
    def h(self) -> int:
        return len(self.claims)

    @property
    def entities(self) -> tuple[str, ...]:
        return (self.claims[0].subject,) + tuple(c.object for c in self.claims)

    @property
    def start_entity(self) -> str:
        return self.claims[0].subject

    @property
    def answer_entity(self) -> str:
        return self.claims[-1].object

    @property
    def relations(self) -> tuple[str, ...]:
        return tuple(c.relation for c in self.claims)

    def is_valid(self, min_hops: int = 3) -> bool:
        linked = all(a.object == b.subject for a, b in zip(self.claims, self.claims[1:]))
        ents = self.entities
        return self.h >= min_hops and linked and len(set(ents)) == len(ents)


@dataclass(frozen=True)
class ClaimGraph:
    entities: tuple[str, ...]
    claims: tuple[Claim, ...]
    chains: tuple[HopChain, ...]
    off_chain: tuple[tuple[Claim, ...], ...]  # distractor claims, aligned with ``chains``
    adjacency: dict[str, tuple[Claim, ...]] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        adj: dict[str, list[Claim]] = {}
        for c in self.claims:
            adj.setdefault(c.subject, []).append(c)
        object.__setattr__(self, "adjacency", {e: tuple(cs) for e, cs in adj.items()})


@dataclass(frozen=True)
class Task:
    task_id: str
    question: str
    gold_answers: tuple[str, ...]
    golden_doc_ids: tuple[str, ...]  # one per hop, in hop order
    hop_chain: HopChain
    created_seed: int

    @property
    def golden_set(self) -> frozenset[str]:
        return frozenset(self.golden_doc_ids)

    @property
    def claim_by_doc(self) -> dict[str, Claim]:
        return dict(zip(self.golden_doc_ids, self.hop_chain.claims))

    def question_entities(self) -> list[str]:
        """Chain entities named in the question, in chain order."""
        toks = set(tokenize(self.question))
        return [e for e in self.hop_chain.entities if set(tokenize(e)) <= toks]

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "question": self.question,
            "gold_answers": list(self.gold_answers),
            "golden_doc_ids": list(self.golden_doc_ids),
            "hops": [c.as_list() for c in self.hop_chain.claims],
            "seed": self.created_seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> Task:
        chain = HopChain(tuple(Claim(*hop) for hop in rec["hops"]))
        return cls(
            rec["task_id"],
            rec["question"],
            tuple(rec["gold_answers"]),
            tuple(rec["golden_doc_ids"]),
            chain,
            rec["seed"],
        )


@dataclass(frozen=True)
class GenConfig:
    n_tasks: int = 200
    h: int = 3
    distractors_per_task: int = 5
    n_relations: int = 12
    n_entities: int | None = None  # default: enough for one fresh entity per claim
    seed: int = 42

    def __post_init__(self) -> None:
        if self.n_tasks < 1 or self.n_relations < 1 or self.distractors_per_task < 0:
            raise GenerationError("counts must be positive")
        if self.h < 3:
            raise GenerationError("tasks need at least three hops")
        if self.n_relations > len(RELATIONS):
            raise GenerationError(f"only {len(RELATIONS)} relation templates are available")
        if self.h > self.n_relations:
            raise GenerationError("a chain needs h distinct relations")
        if self.n_entities is None:
            object.__setattr__(self, "n_entities", self.n_tasks * (self.h + 1 + self.distractors_per_task))
        if self.n_entities < 1:
            raise GenerationError("counts must be positive")


def _entity_names(n: int, rng: random.Random) -> list[str]:
    reserved = question_vocabulary() | document_vocabulary()
    names: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(names) < n:
        attempts += 1
        if attempts > 50 * n + 1000:
            raise GenerationError("could not generate enough unique entity names")
        syllables = rng.randint(2, 3)
        name = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables)) + rng.choice(_CODAS)
        if name in seen or name in reserved:
            continue
        seen.add(name)
        names.append(name.capitalize())
    return names


def build_claim_graph(cfg: GenConfig, rng: random.Random) -> ClaimGraph:
    """Plant ``n_tasks`` vertex-disjoint chains plus off-chain distractor claims.

    Relations are functional: no subject has two claims with the same
    relation, so following a relation path from an entity is unambiguous.
    """
    per_chain = cfg.h + 1
    if cfg.n_tasks * per_chain > cfg.n_entities:
        raise GenerationError(
            f"{cfg.n_entities} entities cannot hold {cfg.n_tasks} disjoint chains of {cfg.h} hops"
        )
    names = _entity_names(cfg.n_entities, rng)
    rng.shuffle(names)
    leftovers = names[cfg.n_tasks * per_chain :]
    if cfg.distractors_per_task and not leftovers:
        raise GenerationError("no entities left over for distractor claims")
    relations = [r.label for r in RELATIONS[: cfg.n_relations]]

    used: set[tuple[str, str]] = set()  # (subject, relation)
    claims: list[Claim] = []
    chains: list[HopChain] = []
    for i in range(cfg.n_tasks):
        ents = names[i * per_chain : (i + 1) * per_chain]
        rels = rng.sample(relations, cfg.h)
        chain = HopChain(tuple(Claim(s, r, o) for s, r, o in zip(ents, rels, ents[1:])))
        chains.append(chain)
        claims.extend(chain.claims)
        used.update((c.subject, c.relation) for c in chain.claims)

    off_chain: list[tuple[Claim, ...]] = []
    for chain in chains:
        extra: list[Claim] = []
        tries = 0
        while len(extra) < cfg.distractors_per_task:
            tries += 1
            if tries > 1000 * (cfg.distractors_per_task + 1):
                raise GenerationError("relation vocabulary exhausted for distractor claims")
            anchor = rng.choice(chain.entities)
            other = rng.choice(leftovers)
            rel = rng.choice(relations)
            subj, obj = (anchor, other) if rng.random() < 0.5 else (other, anchor)
            if (subj, rel) in used:
                continue
            used.add((subj, rel))
            extra.append(Claim(subj, rel, obj))
        off_chain.append(tuple(extra))
        claims.extend(extra)

    return ClaimGraph(tuple(names), tuple(claims), tuple(chains), tuple(off_chain))


def enumerate_paths(graph: ClaimGraph, h: int) -> list[tuple[Claim, ...]]:
    """Every directed path of ``h`` claims with pairwise-distinct entities."""
    paths: list[tuple[Claim, ...]] = []

    def extend(path: list[Claim], seen: set[str]) -> None:
        if len(path) == h:
            paths.append(tuple(path))
            return
        for c in graph.adjacency.get(path[-1].object, ()):
            if c.object not in seen:
                extend(path + [c], seen | {c.object})

    for c in graph.claims:
        if c.subject != c.object:
            extend([c], {c.subject, c.object})
    return paths


def sample_hop_chain(
    graph: ClaimGraph,
    h: int,
    rng: random.Random,
    used: Iterable[Claim] = (),
) -> HopChain:
    """Pick a planted chain of length ``h`` sharing no claim with ``used``."""
    if h < 3:
        raise GenerationError("tasks need at least three hops")
    used = set(used)
    free = [c for c in graph.chains if c.h == h and not used.intersection(c.claims)]
    if not free:
        raise GenerationError("claim graph has no unused chain left")
    return rng.choice(free)


def _chain_index(graph: ClaimGraph, chain: HopChain) -> int:
    try:
        return graph.chains.index(chain)
    except ValueError:
        raise GenerationError("chain is not planted in this graph") from None


def _new_doc_id(rng: random.Random, taken: set[str]) -> str:
    while True:
        doc_id = f"d{rng.getrandbits(40):010x}"
        if doc_id not in taken:
            taken.add(doc_id)
            return doc_id


def verbalize(claim: Claim, rng: random.Random, n_fillers: int = 2) -> str:
    verb = RELATION_BY_LABEL[claim.relation].verb
    fillers = rng.sample(FILLERS, n_fillers)
    return " ".join([f"{claim.subject} {verb} {claim.object}."] + fillers)


def render_documents(
    graph: ClaimGraph,
    chain: HopChain,
    cfg: GenConfig,
    rng: random.Random,
    taken: set[str] | None = None,
) -> list[Document]:
    """Golden documents (one per hop, in hop order) followed by distractors."""
    taken = set() if taken is None else taken
    idx = _chain_index(graph, chain)
    distractors = graph.off_chain[idx]
    if len(distractors) < cfg.distractors_per_task:
        raise GenerationError("not enough off-chain claims for the requested distractors")
    docs = [Document(_new_doc_id(rng, taken), c.subject, verbalize(c, rng), False) for c in chain.claims]
    for c in rng.sample(list(distractors), cfg.distractors_per_task):
        docs.append(Document(_new_doc_id(rng, taken), c.subject, verbalize(c, rng), True))
    return docs


def synthesize_task(
    chain: HopChain,
    golden_docs: Sequence[Document],
    rng: random.Random,
    task_id: str,
    seed: int = 0,
) -> Task:
    """Question naming the start entity and the relation path; answer is the chain end."""
    template = rng.choice(QUESTION_TEMPLATES)
    question = template.format(start=chain.start_entity, path=PATH_JOINER.join(chain.relations))
    ids = tuple(d.doc_id for d in golden_docs[: chain.h])
    return Task(task_id, question, (chain.answer_entity,), ids, chain, seed)


def derivable(task: Task, doc_ids: Iterable[str]) -> bool:
    """Can the answer be reached from question entities using only these golden docs?

    Follows any suffix of the relation path from any entity the question
    names, over the claims the given documents carry.
    """
    by_doc = task.claim_by_doc
    claims = [by_doc[d] for d in doc_ids if d in by_doc]
    rels = task.hop_chain.relations
    answer = task.hop_chain.answer_entity
    for start in task.question_entities():
        for offset in range(len(rels) + 1):
            frontier = {start}
            for rel in rels[offset:]:
                frontier = {c.object for c in claims if c.subject in frontier and c.relation == rel}
            if answer in frontier:
                return True
    return False


def verify_min_hops(task: Task, corpus: Corpus, check=derivable) -> bool:
    """True iff no proper subset of the golden documents (including none) yields the answer."""
    missing = [d for d in task.golden_doc_ids if d not in corpus]
    if missing:
        raise VerificationError(f"golden docs {missing} of task {task.task_id} missing from corpus")
    golden = task.golden_doc_ids
    for size in range(len(golden)):
        for subset in itertools.combinations(golden, size):
            if check(task, subset):
                return False
    return True


@dataclass
class Dataset:
    cfg: GenConfig
    graph: ClaimGraph
    tasks: list[Task]
    documents: list[Document]


def generate_dataset(cfg: GenConfig) -> Dataset:
    rng = random.Random(cfg.seed)
    graph = build_claim_graph(cfg, rng)
    width = max(4, len(str(cfg.n_tasks - 1)))
    taken: set[str] = set()
    used: set[Claim] = set()
    tasks: list[Task] = []
    docs: list[Document] = []
    for i in range(cfg.n_tasks):
        chain = sample_hop_chain(graph, cfg.h, rng, used)
        used.update(chain.claims)
        task_docs = render_documents(graph, chain, cfg, rng, taken)
        tasks.append(synthesize_task(chain, task_docs, rng, f"t{i:0{width}d}", cfg.seed))
        docs.extend(task_docs)
    docs.sort(key=lambda d: d.doc_id)
    return Dataset(cfg, graph, tasks, docs)


def save_tasks(tasks: Iterable[Task], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_record(), ensure_ascii=False) + "\n")


def load_tasks(path: str | Path) -> list[Task]:
    with open(path, encoding="utf-8") as fh:
        return [Task.from_record(json.loads(line)) for line in fh if line.strip()]


def export_dataset(tasks: Sequence[Task], docs: Sequence[Document], out_dir: str | Path, corpus: Corpus) -> dict[str, Path]:
    """Write ``corpus.jsonl`` and ``tasks.jsonl``; every task must verify first."""
    for task in tasks:
        if not verify_min_hops(task, corpus):
            raise VerificationError(f"task {task.task_id} is answerable from fewer than all golden docs")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": out / "corpus.jsonl", "tasks": out / "tasks.jsonl"}
    save_corpus(sorted(docs, key=lambda d: d.doc_id), paths["corpus"])
    save_tasks(tasks, paths["tasks"])
    return paths
