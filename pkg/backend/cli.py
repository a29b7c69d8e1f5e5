"""
cli.py
------
Command-line entry point (`arcqa`).

    arcqa index build|search
    arcqa rewriter train|eval|tag|convert|split
    arcqa entail train|eval|score
    arcqa answer | evaluate | sweep | compare

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
Defaults for BM25 constants, workers, seed and cache directory come from
the environment (see backend/settings.py); flags override them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from backend.errors import EXIT_OK, EXIT_USAGE, ArcQAError, ConfigurationError, exit_code_for
from backend.settings import configure_logging, get_settings

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this CLI reserves 2 for data errors."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str) -> None:
    sys.stdout.write(text + "\n")


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

def _cmd_index_build(args) -> int:
    from agents.corpus_index import Bm25Params, build_index, read_corpus, save_index

    index = build_index(read_corpus(args.corpus), Bm25Params(k1=args.k1, b=args.b), shards=args.shards)
    target = save_index(index, args.out)
    postings = sum(len(ids) for ids, _ in index.postings.values())
    _emit(json.dumps({"docs": index.doc_count, "terms": len(index.postings), "postings": postings,
                      "skipped": index.skipped, "path": str(target)}))
    return EXIT_OK


def _cmd_index_search(args) -> int:
    from agents.corpus_index import load_index, search

    index = load_index(args.index)
    for r in search(index, args.query, args.k):
        _emit(f"{r.rank}\t{r.score:.6f}\t{r.doc_id}\t{index.document(r.doc_id).text}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rewriter
# ---------------------------------------------------------------------------

def _cmd_rewriter_train(args) -> int:
    from agents.embeddings import load_kg_embeddings, load_kg_lexicon, load_word_embeddings
    from agents.qa_dataset import load_essential_terms
    from agents.rewriter import TrainConfig, eval_tagger, save_tagger, train_tagger

    if bool(args.kg_lexicon) != bool(args.kg_embeddings):
        raise ConfigurationError("--kg-lexicon and --kg-embeddings go together")
    train = load_essential_terms(args.train, args.threshold)
    dev = load_essential_terms(args.dev, args.threshold) if args.dev else None
    config = TrainConfig(epochs=args.epochs, lr0=args.lr, lr_decay=args.lr_decay,
                         rng_seed=args.seed, hidden=args.hidden)
    words = load_word_embeddings(args.embeddings)
    kg = load_kg_embeddings(args.kg_embeddings) if args.kg_embeddings else None
    lexicon = load_kg_lexicon(args.kg_lexicon) if args.kg_lexicon else None
    model = train_tagger(train, config, words, kg, lexicon, dev=dev, variant=args.kg_variant or "")
    save_tagger(model, args.out)
    metrics = eval_tagger(model, dev or train)
    _emit(metrics.model_dump_json())
    return EXIT_OK


def _cmd_rewriter_eval(args) -> int:
    from agents.qa_dataset import load_essential_terms
    from agents.rewriter import eval_tagger, load_tagger

    metrics = eval_tagger(load_tagger(args.model), load_essential_terms(args.data, args.threshold))
    _emit(metrics.model_dump_json())
    return EXIT_OK


def _cmd_rewriter_tag(args) -> int:
    from agents.rewriter import load_tagger, select_terms

    _emit(" ".join(select_terms(load_tagger(args.model), args.stem)))
    return EXIT_OK


def _cmd_rewriter_convert(args) -> int:
    from agents.qa_dataset import convert_pipe_annotated

    rows = convert_pipe_annotated(args.input, args.out)
    _emit(f"converted {len(rows)} questions → {args.out}")
    return EXIT_OK


def _cmd_rewriter_split(args) -> int:
    from agents.qa_dataset import load_essential_terms, parse_questions, split_essential_terms

    examples = load_essential_terms(args.input, args.threshold)
    exclude = [q.stem for path in args.exclude for q in parse_questions(path)]
    parts = split_essential_terms(examples, exclude, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "dev", "test"), parts):
        with open(out_dir / f"{name}.tsv", "w", encoding="utf-8") as f:
            for ex in part:
                f.write(" ".join(t.surface for t in ex.tokens) + "\t" + " ".join(map(str, ex.ratings)) + "\n")
    _emit(json.dumps({name: len(part) for name, part in zip(("train", "dev", "test"), parts)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entail
# ---------------------------------------------------------------------------

def _cmd_entail_train(args) -> int:
    from agents.embeddings import load_word_embeddings
    from agents.entailment import (EntailmentTrainConfig, build_match_lstm, eval_entailment,
                                   save_entailment, train_entailment)
    from agents.qa_dataset import load_entailment_pairs

    pairs = load_entailment_pairs(args.data)
    config = EntailmentTrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed,
                                   hidden=args.hidden, matcher=args.matcher)
    model = train_entailment(build_match_lstm(load_word_embeddings(args.embeddings), config), pairs, config)
    save_entailment(model, args.out)
    _emit(eval_entailment(model, pairs).model_dump_json())
    return EXIT_OK


def _cmd_entail_eval(args) -> int:
    from agents.entailment import eval_entailment, load_entailment
    from agents.qa_dataset import load_entailment_pairs

    _emit(eval_entailment(load_entailment(args.model), load_entailment_pairs(args.data)).model_dump_json())
    return EXIT_OK


def _cmd_entail_score(args) -> int:
    from agents.entailment import LexicalScorer, MatchLstmScorer, load_entailment, score_evidence

    if args.scorer == "mlstm":
        if not args.model:
            raise ConfigurationError("--scorer mlstm needs --model")
        scorer = MatchLstmScorer(load_entailment(args.model))
    else:
        scorer = LexicalScorer()
    score = score_evidence(scorer, args.premise, args.context or "", args.hypothesis)
    _emit(f"{score.p_entails:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _pipeline_config(args):
    from backend.schemas import PipelineConfig

    settings = get_settings()
    if args.tagger and args.passthrough:
        raise ConfigurationError("--tagger and --passthrough are exclusive")
    return PipelineConfig(
        index_path=args.index,
        tagger_path=None if args.passthrough else args.tagger,
        scorer=args.scorer,
        entail_model_path=args.entail_model,
        rule=args.rule,
        depth=args.k,
        split=args.split,
        k_retrieve=args.k_retrieve,
        cache_dir=args.cache_dir or settings.cache_dir,
        workers=args.workers or settings.workers,
        trace=getattr(args, "trace", False),
    )


def _cmd_answer(args) -> int:
    from backend.pipeline import answer_file

    config = _pipeline_config(args)
    trace_path = Path(str(args.out) + ".trace.jsonl") if config.trace else None
    traces = answer_file(args.questions, config, args.out, trace_path=trace_path)
    _emit(f"answered {len(traces)} questions → {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from agents.reporter import render_console, render_markdown
    from backend.pipeline import evaluate_predictions

    report = evaluate_predictions(args.predictions, args.gold)
    _emit(render_console(report, source=str(args.predictions)))
    if args.markdown:
        Path(args.markdown).write_text(render_markdown(report, source=str(args.predictions)), encoding="utf-8")
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from agents.reporter import render_sweep
    from backend.pipeline import run_sweep

    sweep = run_sweep(args.questions, _pipeline_config(args), args.depths)
    _emit(render_sweep(sweep))
    return EXIT_OK


def _cmd_compare(args) -> int:
    from agents.reporter import render_comparison
    from agents.resolver import compare_rules
    from backend.pipeline import evaluate_predictions

    a = evaluate_predictions(args.a, args.gold)
    b = evaluate_predictions(args.b, args.gold)
    _emit(render_comparison(compare_rules(a.credits, b.credits), names=(args.a, args.b)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--questions", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--tagger")
    p.add_argument("--passthrough", action="store_true", help="use the full question as the query terms")
    p.add_argument("--scorer", choices=["lexical", "mlstm"], default="lexical")
    p.add_argument("--entail-model")
    p.add_argument("--rule", choices=["ai2", "maxentail"], default="maxentail")
    p.add_argument("--k", type=int, default=8, help="rule depth (j for ai2, k for maxentail)")
    p.add_argument("--k-retrieve", type=int)
    p.add_argument("--split", action="store_true")
    p.add_argument("--cache-dir")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = _Parser(prog="arcqa", description="Science exam QA: rewrite, retrieve, entail, decide")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    index = sub.add_parser("index").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = index.add_parser("build")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k1", type=float, default=settings.bm25_k1)
    p.add_argument("--b", type=float, default=settings.bm25_b)
    p.add_argument("--shards", type=int, default=1)
    p.set_defaults(func=_cmd_index_build)
    p = index.add_parser("search")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=_cmd_index_search)

    rw = sub.add_parser("rewriter").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = rw.add_parser("train")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--kg-lexicon")
    p.add_argument("--kg-embeddings")
    p.add_argument("--kg-variant", help="name recorded in the model, e.g. transh, complex, ppmi")
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.015)
    p.add_argument("--lr-decay", type=float, default=0.05)
    p.add_argument("--hidden", type=int, default=200)
    p.add_argument("--threshold", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rewriter_train)
    p = rw.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=int, default=3)
    p.set_defaults(func=_cmd_rewriter_eval)
    p = rw.add_parser("tag")
    p.add_argument("--model", required=True)
    p.add_argument("--stem", required=True)
    p.set_defaults(func=_cmd_rewriter_tag)
    p = rw.add_parser("convert")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rewriter_convert)
    p = rw.add_parser("split")
    p.add_argument("--input", required=True)
    p.add_argument("--exclude", nargs="*", default=[], help="ARC question files whose stems are held out")
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--threshold", type=int, default=3)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_rewriter_split)

    ent = sub.add_parser("entail").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ent.add_parser("train")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--matcher", type=int, default=50)
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_entail_train)
    p = ent.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_entail_eval)
    p = ent.add_parser("score")
    p.add_argument("--scorer", choices=["lexical", "mlstm"], default="lexical")
    p.add_argument("--model")
    p.add_argument("--premise", required=True)
    p.add_argument("--hypothesis", required=True)
    p.add_argument("--context", help="earlier question sentences prepended to the premise")
    p.set_defaults(func=_cmd_entail_score)

    p = sub.add_parser("answer")
    _add_pipeline_flags(p)
    p.add_argument("--trace", action="store_true", help="also write <out>.trace.jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_answer)

    p = sub.add_parser("evaluate")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--markdown")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep")
    _add_pipeline_flags(p)
    p.add_argument("--depths", type=int, nargs="+", default=[1, 2, 4, 8, 16, 30])
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("compare")
    p.add_argument("--a", required=True, help="predictions file of the first run")
    p.add_argument("--b", required=True, help="predictions file of the second run")
    p.add_argument("--gold", required=True)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        parser = build_parser()
    except ValidationError as exc:
        sys.stderr.write(f"arcqa: invalid environment configuration: {exc}\n")
        return EXIT_USAGE
    args = parser.parse_args(argv)
    configure_logging("DEBUG" if args.verbose else None)
    try:
        return args.func(args)
    except ValidationError as exc:
        logger.error("Invalid configuration: %s", exc)
        return EXIT_USAGE
    except (ArcQAError, OSError) as exc:
        logger.error("%s", exc)
        return exit_code_for(exc) if isinstance(exc, ArcQAError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
