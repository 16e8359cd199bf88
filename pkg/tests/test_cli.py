import csv
import json

import pytest

from kgrag.cli import build_parser, main
from kgrag.kg_store import desk_aliases_path, desk_kg_path

from conftest import WORKED_QUESTION


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


@pytest.fixture
def artifacts(tmp_path, capsys):
    store, vec, reps = tmp_path / "store", tmp_path / "v.txt", tmp_path / "g.txt"
    code, stats, _ = run(capsys, "kg", "ingest", "--triples", desk_kg_path(), "--aliases", desk_aliases_path(), "--out", store)
    assert code == 0 and stats["triples"] == 20 and stats["entities"] == 20
    code, out, _ = run(capsys, "embed", "train", "--store", store, "--dim", 8, "--epochs", 20, "--out", vec,
                       "--loss-figure", tmp_path / "loss.png")
    assert code == 0 and out["epochs"] == 20 and (tmp_path / "loss.png").stat().st_size > 0
    code, out, _ = run(capsys, "gcn", "refine", "--store", store, "--vectors", vec, "--out", reps)
    assert code == 0 and out["dim"] == 8 and out["layers"] == 2
    return tmp_path, ["--store", store, "--vectors", vec, "--gcn", reps]


def test_kg_stats(artifacts, capsys):
    tmp, common = artifacts
    code, stats, _ = run(capsys, "kg", "stats", "--store", common[1])
    assert code == 0
    assert stats["relation_counts"]["treated by"] == 5 and stats["relations"] == 6


def test_query_ask(artifacts, capsys):
    _, common = artifacts
    code, out, _ = run(capsys, "query", "ask", *common, "--question", WORKED_QUESTION)
    assert code == 0
    assert "spraying antiviral agents" in out["answer"]["entities"]
    assert out["evidence"]["context_text"].startswith("EVIDENCE:")
    assert set(out["timings"]) == {"link", "subgraph", "rank", "context", "generate"}
    code, out, _ = run(capsys, "query", "ask", *common, "--question", "hello")
    assert code == 0 and out["abstained_reason"] == "no-entity"


def test_query_top_k_zero(artifacts, capsys):
    _, common = artifacts
    code, out, _ = run(capsys, "query", "ask", *common, "--top-k", 0, "--question", WORKED_QUESTION)
    assert out["evidence"]["context_text"] == "EVIDENCE:" and out["answer"]["text"] == "no supported answer"


def test_embed_eval(artifacts, capsys):
    tmp, common = artifacts
    test = tmp / "test.tsv"
    test.write_text("tobacco mosaic disease\tcaused by\taphids\n")
    code, _, err = run(capsys, "embed", "eval", "--store", common[1], "--vectors", common[3], "--test", test)
    assert code == 1 and "error" in err  # held-out triple already in the store
    test.write_text("black shank\ttreated by\tfield sanitation\n")
    code, out, _ = run(capsys, "embed", "eval", "--store", common[1], "--vectors", common[3], "--test", test)
    assert code == 0 and out["num_test"] == 1 and 0 < out["MRR"] <= 1 and set(out["hits_at"]) == {"1", "3", "10"}


def test_eval_synthetic_and_compare(tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "synthetic", "--out-dir", tmp_path)
    assert code == 0 and out["num_questions"] == 200 and out["num_triples"] == 150
    store, vec, reps = tmp_path / "store", tmp_path / "v.txt", tmp_path / "g.txt"
    assert run(capsys, "kg", "ingest", "--triples", tmp_path / "kg.tsv", "--out", store)[0] == 0
    assert run(capsys, "embed", "train", "--store", store, "--epochs", 10, "--out", vec)[0] == 0
    assert run(capsys, "gcn", "refine", "--store", store, "--vectors", vec, "--out", reps)[0] == 0
    common = ["--store", store, "--vectors", vec, "--gcn", reps, "--dataset", tmp_path / "qa.jsonl"]
    report = tmp_path / "report.csv"
    code, out, _ = run(capsys, "eval", "run", *common, "--mode", "compare", "--report-csv", report, "--predictions", tmp_path / "p.jsonl")
    assert code == 0
    assert out["no-evidence"]["accuracy"] < out["flat-1hop"]["accuracy"] < out["graphrag"]["accuracy"]
    rows = list(csv.DictReader(open(report)))
    assert {r["method"] for r in rows} == {"no-evidence", "flat-1hop", "graphrag"} and len(rows) == 12
    assert (tmp_path / "report.png").stat().st_size > 0
    assert len((tmp_path / "p.jsonl").read_text().splitlines()) == 600
    code, out, _ = run(capsys, "eval", "run", *common, "--mode", "flat", "--workers", 2)
    assert code == 0 and list(out) == ["flat"] and out["flat"]["counts"]["questions"] == 200


def test_errors_exit_nonzero(tmp_path, capsys):
    code, _, err = run(capsys, "kg", "stats", "--store", tmp_path / "nope")
    assert code == 1 and err.startswith("kgrag: error:")
    bad = tmp_path / "bad.tsv"
    bad.write_text("only two\tcolumns\n")
    code, _, err = run(capsys, "kg", "ingest", "--triples", bad, "--out", tmp_path / "s")
    assert code == 1 and "line 1" in err


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["kg"])
    args = build_parser().parse_args(["embed", "train", "--store", "s", "--out", "o", "--norm", "l1"])
    assert args.norm == "L1"
