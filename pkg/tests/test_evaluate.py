import numpy as np
import pytest

from forage.corpus import build_index
from forage.datagen import Document, GenConfig, generate_dataset
from forage.env import EnvConfig
from forage.evaluate import (
    BaselineKind,
    EvalError,
    EvalReport,
    EvalRow,
    one_shot_rag_answer,
    rag_episode,
    render_report,
    run_policy_eval,
)
from forage.policy import PolicyParams


def test_oracle_is_perfect(small_world):
    ds, corpus = small_world
    rep = run_policy_eval(BaselineKind.ORACLE, ds.tasks, corpus, graph=ds.graph)
    assert rep.em == 1.0 and rep.mean_coverage == 1.0 and rep.mean_T == 4.0
    assert [r.task_id for r in rep.rows] == sorted(t.task_id for t in ds.tasks)


def test_random_not_better_than_oracle(small_world):
    ds, corpus = small_world
    rnd = run_policy_eval(BaselineKind.RANDOM, ds.tasks, corpus, seed=3)
    assert rnd.em <= 1.0 and rnd.mean_reward < run_policy_eval(BaselineKind.ORACLE, ds.tasks, corpus).mean_reward
    again = run_policy_eval(BaselineKind.RANDOM, ds.tasks, corpus, seed=3)
    assert again.rows == rnd.rows


def test_aggregates_are_row_means(small_world):
    ds, corpus = small_world
    rep = run_policy_eval(BaselineKind.RANDOM, ds.tasks, corpus, seed=1)
    assert rep.em == pytest.approx(np.mean([r.em for r in rep.rows]), abs=1e-15)
    assert rep.f1 == pytest.approx(np.mean([r.f1 for r in rep.rows]), abs=1e-15)
    assert rep.mean_T == pytest.approx(np.mean([r.steps_T for r in rep.rows]), abs=1e-15)


def test_params_policy_greedy(small_world):
    ds, corpus = small_world
    a = run_policy_eval(PolicyParams.zeros(), ds.tasks, corpus)
    b = run_policy_eval(PolicyParams.zeros(), ds.tasks, corpus)
    assert a.rows == b.rows and a.policy == "params"


def test_rag_fails_on_final_hop(small_world):
    ds, corpus = small_world
    rep = run_policy_eval(BaselineKind.ONE_SHOT_RAG, ds.tasks, corpus)
    assert rep.em <= 0.05
    assert all(r.steps_T == 2 for r in rep.rows)


def test_rag_episode_shape(small_world):
    ds, corpus = small_world
    ep = rag_episode(ds.tasks[0], corpus)
    kinds = [b.kind.value for b in ep.trajectory.blocks]
    assert kinds == ["search", "info", "answer"]
    assert ep.reward.steps_T == 2
    assert ep.trajectory.info_blocks[0].doc_ids == tuple(corpus.retrieve(ds.tasks[0].question, 3).doc_ids)


def test_rag_single_document():
    ds = generate_dataset(GenConfig(n_tasks=2, seed=1))
    task = ds.tasks[0]
    doc = Document("only", "Solo", "Marlo Fenwick mentored Tavi Orsk. Nothing else.")
    corpus = build_index([doc])
    answer = one_shot_rag_answer(task, corpus, k=10)
    assert answer in ("", "Marlo", "Fenwick", "Tavi", "Orsk")


def test_rag_k_larger_than_corpus(small_world):
    ds, corpus = small_world
    assert one_shot_rag_answer(ds.tasks[0], corpus, k=10_000) == one_shot_rag_answer(ds.tasks[0], corpus, k=10_000)
    with pytest.raises(EvalError):
        one_shot_rag_answer(ds.tasks[0], corpus, k=0)


def test_rag_no_candidates():
    ds = generate_dataset(GenConfig(n_tasks=2, seed=1))
    corpus = build_index([Document("x", "x", "nothing capitalized here.")])
    assert one_shot_rag_answer(ds.tasks[0], corpus) == ""


def test_failed_rows_excluded():
    rows = [EvalRow("a", em=1.0, f1=1.0, steps_T=4), EvalRow("b", failed=True, error="boom")]
    rep = EvalReport("x", rows)
    assert rep.em == 1.0 and rep.n_failed == 1 and rep.mean_T == 4.0
    assert "failed" in render_report(rep)


class TestRender:
    def test_empty_is_header_only(self):
        rep = EvalReport("oracle", [])
        assert render_report(rep).splitlines() == ["task_id  em  f1  steps_T  final_coverage  total_reward  status"]
        assert render_report(rep, "csv") == "task_id,em,f1,steps_T,final_coverage,total_reward,status\n"
        assert rep.em == 0.0

    def test_csv_rows_and_determinism(self, small_world):
        ds, corpus = small_world
        rep = run_policy_eval(BaselineKind.ORACLE, ds.tasks, corpus, EnvConfig())
        csv = render_report(rep, "csv")
        assert len(csv.splitlines()) == len(ds.tasks) + 1
        assert csv == render_report(run_policy_eval(BaselineKind.ORACLE, ds.tasks, corpus), "csv")
        table = render_report(rep)
        assert "EM=1.0000" in table and "alpha=0.2" in table

    def test_unknown_format(self):
        with pytest.raises(EvalError):
            render_report(EvalReport("x", []), "json")
