"""Command-line entry point: ``kgrag <group> <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gcn, transe
from .errors import KgragError
from .evaluation import load_qa_dataset, write_jsonl, write_report_csv
from .generation import HTTP, TEMPLATE, GeneratorConfig
from .kg_store import KnowledgeGraph, load_store, read_label_triples
from .pipeline import COMPARISON_METHODS, MODES, Pipeline, PipelineConfig, compare_methods
from .plotting import plot_loss_curve, plot_metrics_by_type
from .retrieval import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_BUDGET, DEFAULT_HOP_LIMIT, DEFAULT_TOP_K
from .synthetic import qa_benchmark

log = logging.getLogger("kgrag")


def _dump(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, ensure_ascii=False)
    sys.stdout.write("\n")


# -- kg ----------------------------------------------------------------------

def cmd_kg_ingest(args) -> int:
    kg = load_store(args.triples, args.aliases)
    kg.save(args.out)
    _dump(kg.graph_stats().as_dict())
    return 0


def cmd_kg_stats(args) -> int:
    _dump(KnowledgeGraph.load(args.store).graph_stats().as_dict())
    return 0


# -- embed -------------------------------------------------------------------

def cmd_embed_train(args) -> int:
    store = KnowledgeGraph.load(args.store)
    cfg = transe.TrainConfig(
        margin=args.margin,
        learning_rate=args.lr,
        epochs=args.epochs,
        norm=args.norm,
        negatives_per_positive=args.negatives,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    table, history = transe.train(store, cfg, args.dim)
    transe.save_embeddings(args.out, table, cfg.norm)
    out = {
        "vectors": str(args.out),
        "epochs": len(history),
        "first_loss": history[0].mean_loss if history else None,
        "final_loss": history[-1].mean_loss if history else None,
    }
    if args.loss_figure and history:
        out["figure"] = str(plot_loss_curve([h.mean_loss for h in history], args.loss_figure))
    _dump(out)
    return 0


def cmd_embed_eval(args) -> int:
    store = KnowledgeGraph.load(args.store)
    table, norm = transe.load_embeddings(args.vectors)
    test = [store.encode(*t) for t in read_label_triples(args.test)]
    result = transe.evaluate_link_prediction(table, test, store, norm)
    _dump({"MRR": result["MRR"], "hits_at": {str(k): v for k, v in result["hits_at"].items()}, "num_test": result["num_test"]})
    return 0


# -- gcn ---------------------------------------------------------------------

def cmd_gcn_refine(args) -> int:
    store = KnowledgeGraph.load(args.store)
    table, norm = transe.load_embeddings(args.vectors)
    layers = gcn.init_gcn_layers(table.dim, args.layers, args.seed)
    fine_tune = None
    if args.fine_tune:
        fine_tune = transe.TrainConfig(epochs=args.epochs, learning_rate=args.lr, margin=args.margin, norm=norm, seed=args.seed)
    reps = gcn.refine_embeddings(table, store, layers, fine_tune)
    gcn.save_representations(args.out, reps, norm)
    _dump({"representations": str(args.out), "layers": reps.layer_index, "dim": reps.dim, "fine_tuned": bool(args.fine_tune)})
    return 0


# -- query / eval ------------------------------------------------------------

def _pipeline_config(args, mode: str | None = None) -> PipelineConfig:
    return PipelineConfig(
        store_path=args.store,
        vectors_path=args.vectors,
        gcn_path=args.gcn,
        hop_limit=args.hops,
        budget=args.budget,
        top_k=args.top_k,
        alpha=args.alpha,
        beta=args.beta,
        mode=mode or args.mode,
        backend=args.backend,
        generator=GeneratorConfig.from_env(timeout=args.gen_timeout_secs, max_tokens=args.max_tokens),
        seed=args.seed,
    )


def cmd_query_ask(args) -> int:
    pipeline = Pipeline.from_config(_pipeline_config(args))
    result = pipeline.ask(args.question)
    _dump(result.as_dict(pipeline.store))
    return 0


def cmd_eval_run(args) -> int:
    compare = args.mode == "compare"
    pipeline = Pipeline.from_config(_pipeline_config(args, "full" if compare else None))
    examples = load_qa_dataset(args.dataset, pipeline.store)
    if compare:
        result = compare_methods(pipeline, examples)
        reports, records = result.reports, result.records
    else:
        report, recs = pipeline.evaluate(examples, workers=args.workers)
        reports, records = {args.mode: report}, {args.mode: recs}
    output = {name: rep.as_dict() for name, rep in reports.items()}
    if args.report_csv:
        write_report_csv(args.report_csv, reports)
        figure = Path(args.report_csv).with_suffix(".png")
        plot_metrics_by_type(reports, figure)
        output["_files"] = {"csv": str(args.report_csv), "figure": str(figure)}
    if args.predictions:
        write_jsonl(args.predictions, [{"method": m, **r} for m, recs in records.items() for r in recs])
    _dump(output)
    return 0


def cmd_eval_synthetic(args) -> int:
    bench = qa_benchmark(seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "kg.tsv", "w", encoding="utf-8") as f:
        f.writelines("\t".join(t) + "\n" for t in bench.triples)
    write_jsonl(out / "qa.jsonl", bench.examples)
    _dump({"triples": str(out / "kg.tsv"), "dataset": str(out / "qa.jsonl"), "num_triples": len(bench.triples), "num_questions": len(bench.examples)})
    return 0


# -- parser ------------------------------------------------------------------

def _add_retrieval_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--store", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--gcn", required=True, help="refined representation file from `gcn refine`")
    p.add_argument("--backend", choices=[TEMPLATE, HTTP], default=TEMPLATE)
    p.add_argument("--hops", type=int, default=DEFAULT_HOP_LIMIT)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="hop penalty weight")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA, help="TransE distance weight")
    p.add_argument("--gen-timeout-secs", type=float, default=30.0)
    p.add_argument("--max-tokens", type=int, default=256)
    p.add_argument("--seed", type=int, default=7)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgrag", description="Knowledge-graph augmented question answering")
    parser.add_argument("-v", "--verbose", action="store_true")
    groups = parser.add_subparsers(dest="group", required=True)

    kg = groups.add_parser("kg", help="ingest and inspect triple stores").add_subparsers(dest="command", required=True)
    p = kg.add_parser("ingest", help="ingest a triple TSV into a store directory")
    p.add_argument("--triples", required=True)
    p.add_argument("--aliases")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kg_ingest)
    p = kg.add_parser("stats", help="print store statistics")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_kg_stats)

    embed = groups.add_parser("embed", help="TransE embeddings").add_subparsers(dest="command", required=True)
    p = embed.add_parser("train", help="train TransE embeddings")
    p.add_argument("--store", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--norm", type=str.upper, choices=[transe.L1, transe.L2], default=transe.L2)
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-figure", help="write a PNG of mean loss per epoch")
    p.set_defaults(func=cmd_embed_train)
    p = embed.add_parser("eval", help="filtered link-prediction metrics on held-out triples")
    p.add_argument("--store", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=cmd_embed_eval)

    g = groups.add_parser("gcn", help="GCN refinement").add_subparsers(dest="command", required=True)
    p = g.add_parser("refine", help="refine TransE entity vectors with a GCN stack")
    p.add_argument("--store", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--fine-tune", action="store_true")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gcn_refine)

    q = groups.add_parser("query", help="answer questions").add_subparsers(dest="command", required=True)
    p = q.add_parser("ask", help="answer one question")
    _add_retrieval_args(p)
    p.add_argument("--question", required=True)
    p.add_argument("--mode", choices=MODES, default="full")
    p.set_defaults(func=cmd_query_ask)

    ev = groups.add_parser("eval", help="QA evaluation").add_subparsers(dest="command", required=True)
    p = ev.add_parser("run", help="evaluate a JSON-lines QA dataset")
    _add_retrieval_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=[*MODES, "compare"], default="full",
                   help=f"'compare' evaluates {', '.join(COMPARISON_METHODS)} side by side")
    p.add_argument("--report-csv", help="CSV with one row per (method, qtype); a PNG figure is written alongside")
    p.add_argument("--predictions", help="JSON-lines file of per-question predictions")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval_run)
    p = ev.add_parser("synthetic", help="write the seeded synthetic KG and QA set")
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (KgragError, OSError) as exc:
        print(f"kgrag: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
