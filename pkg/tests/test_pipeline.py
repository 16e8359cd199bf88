import numpy as np
import pytest

from kgrag import gcn, transe
from kgrag.errors import ConfigError, PipelineError
from kgrag.evaluation import QaExample
from kgrag.generation import ABSTAIN_TEXT
from kgrag.kg_store import desk_aliases_path, desk_kg_path
from kgrag.pipeline import FLAT, FULL, NO_EVIDENCE, STAGES, Pipeline, PipelineConfig, run_pipeline, synthetic_comparison
from kgrag.synthetic import qa_benchmark

from conftest import WORKED_QUESTION


@pytest.fixture(scope="module")
def desk_pipeline():
    cfg = PipelineConfig(kg_path=desk_kg_path(), alias_path=desk_aliases_path(), train=transe.TrainConfig(epochs=50))
    return Pipeline.from_config(cfg)


def test_worked_question_end_to_end(desk_pipeline):
    result = desk_pipeline.ask(WORKED_QUESTION)
    labels = desk_pipeline.predict_labels(WORKED_QUESTION)
    assert "spraying antiviral agents" in labels
    assert result.abstained_reason is None
    assert set(result.timings) == set(STAGES)
    assert all(v >= 0 for v in result.timings.values())
    assert result.evidence.context_text.startswith("EVIDENCE:\n- ")
    d = result.as_dict(desk_pipeline.store)
    assert d["evidence"]["mentions"][0]["entity"] == "tobacco mosaic disease"
    assert len(d["evidence"]["fused_vector"]) == 32


def test_no_entity_abstains(desk_pipeline):
    result = desk_pipeline.ask("hello there")
    assert result.abstained_reason == "no-entity"
    assert result.answer.text == ABSTAIN_TEXT and result.evidence is None


def test_modes(desk_pipeline):
    none = desk_pipeline.ask(WORKED_QUESTION, NO_EVIDENCE)
    assert none.answer.abstained and none.evidence.context_text == "EVIDENCE:"
    flat = desk_pipeline.ask(WORKED_QUESTION, FLAT)
    full = desk_pipeline.ask(WORKED_QUESTION, FULL)
    flat_set = set(flat.evidence.triples)
    assert set(full.evidence.triples) - flat_set
    disease = desk_pipeline.store.entity_id("tobacco mosaic disease")
    assert all(disease in (t.head, t.tail) for t in flat_set)
    assert flat.evidence.ranked_triples == sorted(flat.evidence.ranked_triples, key=lambda x: -x[1])


def test_deterministic_rebuild():
    mk = lambda: Pipeline.from_config(PipelineConfig(kg_path=desk_kg_path(), alias_path=desk_aliases_path(), train=transe.TrainConfig(epochs=20), seed=3))  # noqa: E731
    a, b = mk(), mk()
    assert np.array_equal(a.table.entity_vectors, b.table.entity_vectors)
    assert np.array_equal(a.refined.matrix, b.refined.matrix)
    ra, rb = a.ask(WORKED_QUESTION), b.ask(WORKED_QUESTION)
    assert ra.evidence.ranked_triples == rb.evidence.ranked_triples
    assert a.config.train.seed == 3


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig(mode="magic")
    with pytest.raises(ConfigError):
        PipelineConfig(kg_path=tmp_path / "missing.tsv")
    with pytest.raises(ConfigError):
        Pipeline.from_config(PipelineConfig())


def test_from_saved_artifacts(tmp_path, desk_pipeline):
    desk_pipeline.store.save(tmp_path / "store")
    transe.save_embeddings(tmp_path / "v.txt", desk_pipeline.table, transe.L2)
    gcn.save_representations(tmp_path / "g.txt", desk_pipeline.refined, transe.L2)
    loaded = Pipeline.from_config(PipelineConfig(store_path=tmp_path / "store", vectors_path=tmp_path / "v.txt", gcn_path=tmp_path / "g.txt"))
    a, b = loaded.ask(WORKED_QUESTION), desk_pipeline.ask(WORKED_QUESTION)
    assert [t for t, _ in a.evidence.ranked_triples] == [t for t, _ in b.evidence.ranked_triples]
    assert np.allclose(a.evidence.fused_vector, b.evidence.fused_vector, atol=1e-7)


def test_stage_failure_wrapped(desk_pipeline):
    broken = Pipeline(desk_pipeline.store, desk_pipeline.table, gcn.NodeRepresentations(np.zeros((1, 2)), 2), desk_pipeline.config)
    with pytest.raises(PipelineError) as info:
        broken.ask(WORKED_QUESTION)
    assert info.value.stage in STAGES


def test_run_pipeline_helper():
    result = run_pipeline("What are the symptoms of tmd?", PipelineConfig(kg_path=desk_kg_path(), alias_path=desk_aliases_path(), train=transe.TrainConfig(epochs=5)))
    assert result.answer.answer_entities


def test_evaluate_workers_match_serial():
    bench = qa_benchmark(seed=11, num_questions=30)
    store = bench.store()
    cfg = PipelineConfig(train=transe.TrainConfig(epochs=5))
    table, _ = transe.train(store, cfg.train, 8)
    pipe = Pipeline(store, table, gcn.refine_embeddings(table, store), cfg)
    examples = [QaExample.from_dict(e) for e in bench.examples]
    serial, recs = pipe.evaluate(examples)
    threaded, recs2 = pipe.evaluate(examples, workers=4)
    assert serial.as_dict() == threaded.as_dict() and recs == recs2
    assert [r["id"] for r in recs] == [e.id for e in examples]


def test_synthetic_benchmark_shape():
    bench = qa_benchmark()
    store = bench.store()
    assert store.num_entities == 150 and len(bench.examples) == 200
    assert {e["type"] for e in bench.examples} == {"direct", "multihop", "comparative"}
    labels = set(store.entity_labels)
    assert all(set(e["gold"]) <= labels for e in bench.examples)


def test_synthetic_comparison_ordering():
    result = synthetic_comparison(epochs=20)
    acc = {k: v.accuracy for k, v in result.reports.items()}
    assert acc["no-evidence"] < acc["flat-1hop"] < acc["graphrag"]
