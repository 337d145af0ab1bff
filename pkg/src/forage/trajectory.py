"""Tagged reasoning trajectories: blocks, text format, parsing and loss masks.

A trajectory is a sequence of ``<think>``, ``<search>``, ``<info>`` and
``<answer>`` blocks obeying the grammar::

    (Think? Search Info)* Think? Answer

Info blocks are written by the environment, everything else by the policy.
The loss mask marks which characters of the serialized text the policy
produced.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Sequence

DEFAULT_INFO_TAG = "info"
EVIDENCE_TAG = "evidence"

_DOC_LINE = re.compile(r"\[([^\[\]\n]+)\] (.*)")
_OPEN_TAG = re.compile(r"<([a-z]+)>")


class BlockKind(str, Enum):
    THINK = "think"
    SEARCH = "search"
    INFO = "info"
    ANSWER = "answer"


class Origin(str, Enum):
    MODEL_GENERATED = "model_generated"
    INJECTED = "injected"


class TrajectoryError(ValueError):
    """Raised for grammar violations and malformed trajectory text.

    ``block_index`` names the first offending block when known; ``offset``
    is the character offset into the parsed text for parse failures.
    """

    def __init__(self, message: str, *, block_index: int | None = None, offset: int | None = None):
        super().__init__(message)
        self.block_index = block_index
        self.offset = offset


@dataclass(frozen=True)
class Block:
    kind: BlockKind
    text: str
    doc_ids: tuple[str, ...] = ()

    @classmethod
    def think(cls, text: str) -> Block:
        return cls(BlockKind.THINK, text)

    @classmethod
    def search(cls, query: str) -> Block:
        return cls(BlockKind.SEARCH, query)

    @classmethod
    def answer(cls, text: str) -> Block:
        return cls(BlockKind.ANSWER, text)

    @classmethod
    def info(cls, docs: Iterable[tuple[str, str]] = ()) -> Block:
        """Info block from ``(doc_id, passage)`` pairs, one rendered line each."""
        docs = list(docs)
        return cls(BlockKind.INFO, "\n".join(p for _, p in docs), tuple(d for d, _ in docs))

    @classmethod
    def info_text(cls, text: str) -> Block:
        """Free-text info block with no document references."""
        return cls(BlockKind.INFO, text)

    @property
    def passages(self) -> list[str]:
        if self.kind is not BlockKind.INFO or not self.doc_ids:
            return []
        return self.text.split("\n")


@dataclass(frozen=True)
class Trajectory:
    blocks: tuple[Block, ...]
    question: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def queries(self) -> list[str]:
        return [b.text for b in self.blocks if b.kind is BlockKind.SEARCH]

    @property
    def answer(self) -> str:
        for b in reversed(self.blocks):
            if b.kind is BlockKind.ANSWER:
                return b.text
        raise TrajectoryError("trajectory has no answer block")

    @property
    def info_blocks(self) -> list[Block]:
        return [b for b in self.blocks if b.kind is BlockKind.INFO]


@dataclass(frozen=True)
class MaskSpan:
    start: int
    end: int
    origin: Origin

    @property
    def length(self) -> int:
        return self.end - self.start


def _all_tags() -> list[str]:
    names = [k.value for k in BlockKind] + [EVIDENCE_TAG]
    return [f"<{n}>" for n in names] + [f"</{n}>" for n in names]


_TAG_STRINGS = _all_tags()


def _check_block(block: Block, index: int) -> None:
    if not isinstance(block.kind, BlockKind):
        raise TrajectoryError(f"unknown block kind at block {index}", block_index=index)
    for tag in _TAG_STRINGS:
        if tag in block.text:
            raise TrajectoryError(f"block {index} text contains tag {tag}", block_index=index)
    if block.kind is BlockKind.SEARCH and not block.text.strip():
        raise TrajectoryError(f"empty search query at block {index}", block_index=index)
    if block.kind is not BlockKind.INFO:
        if block.doc_ids:
            raise TrajectoryError(f"doc_ids on non-info block {index}", block_index=index)
        return
    if block.doc_ids:
        if len(set(block.doc_ids)) != len(block.doc_ids):
            raise TrajectoryError(f"duplicate doc_ids in info block {index}", block_index=index)
        for doc_id in block.doc_ids:
            if not doc_id or not re.fullmatch(r"[^\[\]\n]+", doc_id):
                raise TrajectoryError(f"invalid doc_id {doc_id!r} in block {index}", block_index=index)
        if len(block.text.split("\n")) != len(block.doc_ids):
            raise TrajectoryError(
                f"info block {index} has {len(block.doc_ids)} doc_ids but a different passage count",
                block_index=index,
            )
    elif _looks_like_doc_lines(block.text):
        # would parse back with doc_ids and break the round trip
        raise TrajectoryError(f"free-text info block {index} is formatted as document lines", block_index=index)


def _looks_like_doc_lines(body: str) -> bool:
    return bool(body) and all(_DOC_LINE.fullmatch(line) for line in body.split("\n"))


def _grammar_error(blocks: Sequence[Block]) -> tuple[str, int] | None:
    """Return (message, block index) of the first grammar violation, if any."""
    n = len(blocks)
    for i, block in enumerate(blocks):
        kind = block.kind
        nxt = blocks[i + 1].kind if i + 1 < n else None
        if kind is BlockKind.SEARCH and nxt is not BlockKind.INFO:
            return f"Search without Info at block {i}", i
        if kind is BlockKind.INFO and (i == 0 or blocks[i - 1].kind is not BlockKind.SEARCH):
            return f"Info without preceding Search at block {i}", i
        if kind is BlockKind.THINK and nxt not in (BlockKind.SEARCH, BlockKind.ANSWER):
            return f"Think must be followed by Search or Answer at block {i}", i
        if kind is BlockKind.ANSWER and i != n - 1:
            return f"trailing content after Answer at block {i + 1}", i + 1
    if not n or blocks[-1].kind is not BlockKind.ANSWER:
        return f"missing Answer at block {n}", n
    return None


def validate_trajectory(traj: Trajectory, max_steps: int | None = None) -> None:
    """Raise :class:`TrajectoryError` unless ``traj`` is grammar-valid."""
    for i, block in enumerate(traj.blocks):
        _check_block(block, i)
    err = _grammar_error(traj.blocks)
    if err is not None:
        raise TrajectoryError(err[0], block_index=err[1])
    if max_steps is not None:
        n_search = len(traj.queries)
        if n_search > max_steps:
            raise TrajectoryError(f"{n_search} searches exceed max_steps={max_steps}")


def render_block(block: Block, info_tag: str = DEFAULT_INFO_TAG) -> str:
    tag = info_tag if block.kind is BlockKind.INFO else block.kind.value
    if block.kind is BlockKind.INFO and block.doc_ids:
        body = "\n".join(f"[{d}] {p}" for d, p in zip(block.doc_ids, block.passages))
    else:
        body = block.text
    return f"<{tag}>{body}</{tag}>"


def render_blocks(blocks: Iterable[Block], info_tag: str = DEFAULT_INFO_TAG) -> str:
    """Render blocks without grammar checks (used for partial trajectories)."""
    return "\n".join(render_block(b, info_tag) for b in blocks)


def serialize_trajectory(traj: Trajectory, info_tag: str = DEFAULT_INFO_TAG) -> str:
    validate_trajectory(traj)
    return render_blocks(traj.blocks, info_tag)


def block_offsets(traj: Trajectory, info_tag: str = DEFAULT_INFO_TAG) -> list[tuple[int, int]]:
    """``(start, end)`` of every rendered block in the serialized text."""
    offsets = []
    pos = 0
    for i, block in enumerate(traj.blocks):
        if i:
            pos += 1
        n = len(render_block(block, info_tag))
        offsets.append((pos, pos + n))
        pos += n
    return offsets


def parse_trajectory(
    text: str,
    question: str = "",
    *,
    info_tag: str = DEFAULT_INFO_TAG,
    accept_evidence: bool = False,
) -> Trajectory:
    """Parse serialized trajectory text.

    Whitespace between blocks is ignored; text inside a block is kept
    verbatim. With ``accept_evidence`` the ``<evidence>`` tag is read as an
    info block as well.
    """
    tag_kind = {k.value: k for k in BlockKind if k is not BlockKind.INFO}
    tag_kind[info_tag] = BlockKind.INFO
    if accept_evidence:
        tag_kind[EVIDENCE_TAG] = BlockKind.INFO

    blocks: list[Block] = []
    starts: list[int] = []
    pos, n = 0, len(text)
    while True:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _OPEN_TAG.match(text, pos)
        if m is None or m.group(1) not in tag_kind:
            raise TrajectoryError(f"unexpected text at offset {pos}", offset=pos)
        name = m.group(1)
        body_start = m.end()
        close = f"</{name}>"
        end = text.find(close, body_start)
        if end < 0:
            raise TrajectoryError(f"unclosed <{name}> at offset {pos}", offset=pos)
        body = text[body_start:end]
        for tag in _TAG_STRINGS:
            j = body.find(tag)
            if j >= 0:
                raise TrajectoryError(f"interleaved tag {tag} at offset {body_start + j}", offset=body_start + j)
        kind = tag_kind[name]
        if kind is BlockKind.INFO and _looks_like_doc_lines(body):
            pairs = [_DOC_LINE.fullmatch(line).groups() for line in body.split("\n")]
            ids = [p[0] for p in pairs]
            if len(set(ids)) != len(ids):
                raise TrajectoryError(f"duplicate doc_id in info at offset {body_start}", offset=body_start)
            block = Block.info(pairs)
        else:
            block = Block(kind, body)
        if kind is BlockKind.SEARCH and not body.strip():
            raise TrajectoryError(f"empty search query at offset {pos}", offset=pos)
        blocks.append(block)
        starts.append(pos)
        pos = end + len(close)

    err = _grammar_error(blocks)
    if err is not None:
        msg, idx = err
        offset = starts[idx] if idx < len(starts) else n
        raise TrajectoryError(f"{msg} (offset {offset})", block_index=idx, offset=offset)
    return Trajectory(tuple(blocks), question)


def compute_loss_mask(traj: Trajectory, info_tag: str = DEFAULT_INFO_TAG) -> list[MaskSpan]:
    """Partition the serialized text into maximal policy/environment runs.

    Info blocks (tags included) are ``INJECTED``; every other character,
    including the newlines between blocks, is ``MODEL_GENERATED``.
    """
    validate_trajectory(traj)
    spans: list[MaskSpan] = []

    def push(start: int, end: int, origin: Origin) -> None:
        if start == end:
            return
        if spans and spans[-1].origin is origin and spans[-1].end == start:
            spans[-1] = MaskSpan(spans[-1].start, end, origin)
        else:
            spans.append(MaskSpan(start, end, origin))

    pos = 0
    for block, (start, end) in zip(traj.blocks, block_offsets(traj, info_tag)):
        push(pos, start, Origin.MODEL_GENERATED)
        origin = Origin.INJECTED if block.kind is BlockKind.INFO else Origin.MODEL_GENERATED
        push(start, end, origin)
        pos = end
    return spans


def search_step_count(traj: Trajectory) -> int:
    """Number of reasoning steps T: one per search plus the answer step."""
    return len(traj.queries) + 1


def trajectory_record(traj: Trajectory, info_tag: str = DEFAULT_INFO_TAG) -> dict[str, Any]:
    """Sidecar JSON object for one trajectory."""
    return {
        "question": traj.question,
        "blocks": [{"kind": b.kind.value, "text": b.text, "doc_ids": list(b.doc_ids)} for b in traj.blocks],
        "mask_spans": [
            {"start": s.start, "end": s.end, "origin": s.origin.value} for s in compute_loss_mask(traj, info_tag)
        ],
    }


def trajectory_from_record(record: dict[str, Any]) -> Trajectory:
    blocks = tuple(Block(BlockKind(b["kind"]), b["text"], tuple(b.get("doc_ids", ()))) for b in record["blocks"])
    traj = Trajectory(blocks, record.get("question", ""))
    validate_trajectory(traj)
    return traj
