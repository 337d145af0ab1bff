import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forage.trajectory import (
    Block,
    BlockKind,
    Origin,
    Trajectory,
    TrajectoryError,
    compute_loss_mask,
    parse_trajectory,
    render_block,
    search_step_count,
    serialize_trajectory,
    trajectory_from_record,
    trajectory_record,
)

from conftest import random_trajectory
from oracles import injected_by_scanning, merge_regions

CASE_STUDY = """
<think> First, identify players who have won more than ten major (Grand Slam) titles. </think>
<search> Which tennis players have more than ten Grand Slam titles? </search>
<info> Novak Djokovic, Rafael Nadal, and ... have each won more than ten Grand Slam titles. </info>
<think> Next, determine a top-tier tennis tournament held in Florida that could serve as a basis for evaluating recent performance. </think>
<search> What is a major tennis tournament held in Florida? </search>
<info> The Miami Open is a high-profile annual tennis tournament held in Florida. </info>
<think> Check which of the shortlisted players (Djokovic, Nadal ...) has recently performed well at the Miami Open. </think>
<search> Who among Djokovic, Nadal... has recently recorded wins at the Miami Open? </search>
<info> Novak Djokovic has recently won matches at the Miami Open. </info>
<think> Finally, confirm whether this player has achieved a notable long-term ranking milestone that sets them apart in ATP history. </think>
<search> Has Novak Djokovic reached any major career ranking longevity milestones? </search>
<info> Novak Djokovic has surpassed 1000 weeks ranked within the top 100. </info>
<answer> Novak Djokovic </answer>
"""


class TestSerialize:
    def test_minimal(self):
        traj = Trajectory((Block.search("q1"), Block.info([("d1", "first doc")]), Block.answer("a")))
        assert serialize_trajectory(traj) == "<search>q1</search>\n<info>[d1] first doc</info>\n<answer>a</answer>"

    def test_answer_only(self):
        traj = Trajectory((Block.answer("Novak Djokovic"),))
        assert serialize_trajectory(traj) == "<answer>Novak Djokovic</answer>"

    def test_info_renders_one_line_per_document(self):
        block = Block.info([("d1", "alpha"), ("d2", "beta")])
        assert render_block(block) == "<info>[d1] alpha\n[d2] beta</info>"
        assert render_block(block, info_tag="evidence") == "<evidence>[d1] alpha\n[d2] beta</evidence>"

    @pytest.mark.parametrize(
        "blocks, index",
        [
            ((Block.search("q"), Block.answer("a")), 0),
            ((Block.answer("a"), Block.answer("b")), 1),
            ((Block.think("t"), Block.think("u"), Block.answer("a")), 0),
            ((Block.search("q"), Block.info(), Block.search("r")), 2),
            ((Block.info(), Block.answer("a")), 0),
            ((Block.think("t"),), 0),
        ],
    )
    def test_grammar_errors_name_first_block(self, blocks, index):
        with pytest.raises(TrajectoryError) as exc:
            serialize_trajectory(Trajectory(blocks))
        assert exc.value.block_index == index

    def test_blank_search_rejected(self):
        with pytest.raises(TrajectoryError, match="empty search"):
            serialize_trajectory(Trajectory((Block.search("  "), Block.info(), Block.answer("a"))))

    def test_duplicate_doc_ids_rejected(self):
        with pytest.raises(TrajectoryError, match="duplicate"):
            serialize_trajectory(
                Trajectory((Block.search("q"), Block.info([("d1", "x"), ("d1", "y")]), Block.answer("a")))
            )

    def test_tag_inside_text_rejected(self):
        with pytest.raises(TrajectoryError, match="contains tag"):
            serialize_trajectory(Trajectory((Block.answer("x</answer>"),)))


class TestParse:
    def test_answer_only(self):
        traj = parse_trajectory("<answer>x</answer>")
        assert traj.queries == [] and traj.answer == "x"

    def test_search_without_info(self):
        with pytest.raises(TrajectoryError, match="Search without Info at block 0") as exc:
            parse_trajectory("<search>a</search><answer>x</answer>")
        assert exc.value.offset == 0

    def test_case_study_transcript(self):
        traj = parse_trajectory(CASE_STUDY)
        assert len(traj.queries) == 4
        assert traj.answer.strip() == "Novak Djokovic"
        assert search_step_count(traj) == 5
        assert all(b.doc_ids == () for b in traj.info_blocks)

    @pytest.mark.parametrize(
        "text, offset, pattern",
        [
            ("<answer>x", 0, "unclosed"),
            ("junk<answer>x</answer>", 0, "unexpected text"),
            ("<answer>x</answer> tail", 19, "unexpected text"),
            ("<search>a <answer>x</answer></search>", 10, "interleaved"),
            ("<answer>x</answer>\n<answer>y</answer>", 19, "trailing content"),
            ("<search>q</search><info></info>", 31, "missing Answer"),
            ("<foo>x</foo>", 0, "unexpected text"),
        ],
    )
    def test_errors_carry_offsets(self, text, offset, pattern):
        with pytest.raises(TrajectoryError, match=pattern) as exc:
            parse_trajectory(text)
        assert exc.value.offset == offset

    def test_whitespace_between_blocks_is_normalized(self):
        traj = parse_trajectory("  <search>q</search>\n\n\t<info>[d1] x</info>   <answer>a</answer>\n")
        assert serialize_trajectory(traj) == "<search>q</search>\n<info>[d1] x</info>\n<answer>a</answer>"

    def test_evidence_tag_needs_compat_flag(self):
        text = "<search>q</search>\n<evidence>[d1] x</evidence>\n<answer>a</answer>"
        with pytest.raises(TrajectoryError):
            parse_trajectory(text)
        traj = parse_trajectory(text, accept_evidence=True)
        assert traj.info_blocks[0].doc_ids == ("d1",)
        assert serialize_trajectory(traj) == text.replace("evidence", "info")
        assert serialize_trajectory(traj, info_tag="evidence") == text

    def test_configurable_info_tag(self):
        text = "<search>q</search>\n<evidence>[d1] x</evidence>\n<answer>a</answer>"
        assert parse_trajectory(text, info_tag="evidence").info_blocks[0].passages == ["x"]


class TestLossMask:
    def test_no_info_is_one_span(self):
        traj = Trajectory((Block.think("t"), Block.answer("a")))
        text = serialize_trajectory(traj)
        assert compute_loss_mask(traj) == [compute_loss_mask(traj)[0]]
        assert compute_loss_mask(traj)[0].origin is Origin.MODEL_GENERATED
        assert (compute_loss_mask(traj)[0].start, compute_loss_mask(traj)[0].end) == (0, len(text))

    def test_three_spans(self):
        traj = parse_trajectory("<search>q</search>\n<info>[d1] t</info>\n<answer>a</answer>")
        text = serialize_trajectory(traj)
        # offsets from counting characters of the rendered pieces
        info_start = len("<search>q</search>\n")
        info_end = info_start + len("<info>[d1] t</info>")
        assert (info_start, info_end) == (19, 38)
        spans = compute_loss_mask(traj)
        assert [(s.start, s.end, s.origin) for s in spans] == [
            (0, 19, Origin.MODEL_GENERATED),
            (19, 38, Origin.INJECTED),
            (38, len(text), Origin.MODEL_GENERATED),
        ]

    def test_injected_concatenation_equals_rendered_info(self, rng):
        for _ in range(200):
            traj = random_trajectory(rng)
            text = serialize_trajectory(traj)
            injected = "".join(text[s.start : s.end] for s in compute_loss_mask(traj) if s.origin is Origin.INJECTED)
            assert injected == "".join(render_block(b) for b in traj.info_blocks)


class TestStepCount:
    def test_single_search(self):
        traj = Trajectory((Block.search("q"), Block.info(), Block.answer("a")))
        assert search_step_count(traj) == 2

    def test_answer_only(self):
        assert search_step_count(Trajectory((Block.answer("a"),))) == 1

    def test_think_blocks_do_not_count(self, rng):
        for _ in range(100):
            traj = random_trajectory(rng)
            stripped = Trajectory(tuple(b for b in traj.blocks if b.kind is not BlockKind.THINK), traj.question)
            assert search_step_count(stripped) == search_step_count(traj)


class TestRoundTrip:
    def test_fuzz_parse_serialize_identity(self):
        rng = random.Random(7)
        for _ in range(2000):
            traj = random_trajectory(rng)
            text = serialize_trajectory(traj)
            assert parse_trajectory(text, traj.question) == traj
            spans = compute_loss_mask(traj)
            assert spans[0].start == 0 and spans[-1].end == len(text)
            assert all(a.end == b.start and a.origin is not b.origin for a, b in zip(spans, spans[1:]))
            injected = [(s.start, s.end) for s in spans if s.origin is Origin.INJECTED]
            assert injected == merge_regions(injected_by_scanning(text))

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="<>/abceghinorstw \n[]d1", max_size=60))
    def test_serialize_parse_is_idempotent_on_arbitrary_text(self, text):
        try:
            once = serialize_trajectory(parse_trajectory(text))
        except TrajectoryError:
            return
        assert serialize_trajectory(parse_trajectory(once)) == once

    def test_sidecar_record_round_trip(self, rng):
        for _ in range(100):
            traj = random_trajectory(rng)
            record = json.loads(json.dumps(trajectory_record(traj)))
            assert trajectory_from_record(record) == traj
            assert set(record) == {"question", "blocks", "mask_spans"}

