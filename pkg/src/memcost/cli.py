"""Command line entry point.

Subcommands cover the full workflow: ``ingest`` writes a memory store from a
dataset, ``query`` answers one question from it, ``eval`` runs the grading
harness, ``stats`` summarizes a dataset, and ``cost``/``breakeven``/``heatmap``
evaluate the cost model. Exit codes: 0 success, 1 usage error, 2 runtime error.

Commands that spend money finish with a ledger summary line. ``eval
--dry-run`` performs retrieval and serialization but no completion calls,
reporting projected costs from the cost model instead.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, build_client, default_run_config, load_config
from .core import Question, count_tokens, dataset_stats
from .cost_model import (
    GridRange,
    cost_curve,
    default_cost_params,
    heatmap_grid,
    lc_cost,
    mem_cost,
    sensitivity_table,
    write_boundary_csv,
    write_cost_curve_csv,
    write_heatmap_csv,
    write_heatmap_pgm,
    write_sensitivity_csv,
)
from .dataset import Dataset, load_dataset
from .errors import MemcostError
from .eval_harness import (
    DEFAULT_TOP_K,
    answer_with_memory,
    run_eval,
    serialize_conversation,
    write_results_jsonl,
    write_summary_json,
)
from .llm_gateway import UsageLedger
from .memory_engine import MemoryStore, conversation_fingerprint, ingest_conversation
from .prompts import load_prompt

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2); usage problems must exit 1 instead.
    def error(self, message: str) -> None:
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _grid_range(text: str) -> GridRange:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected lo:hi:steps, got {text!r}")
    try:
        lo, hi, steps = (int(part) for part in parts)
        return GridRange(lo=lo, hi=hi, steps=steps)
    except (ValueError, MemcostError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _build_parser() -> _Parser:
    parser = _Parser(prog="memcost", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", metavar="PATH", help="run config JSON (default: built-in offline mock config)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="extract and store memories from a dataset")
    p.add_argument("dataset", help="normalized dataset JSON")
    p.add_argument("--store", required=True, metavar="DIR", help="memory store directory (created or extended)")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("query", help="answer one question from the memory store")
    p.add_argument("user_id")
    p.add_argument("question")
    p.add_argument("--store", required=True, metavar="DIR")
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("eval", help="run the grading harness over a dataset")
    p.add_argument("dataset")
    p.add_argument("--mode", required=True, choices=("memory", "lc", "long_context"))
    p.add_argument("--store", metavar="DIR", help="memory store directory (memory mode)")
    p.add_argument("--out-dir", metavar="DIR", help="where results.jsonl and summary.json go")
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.add_argument("--dry-run", action="store_true", help="retrieve and serialize only; project costs, no completions")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stats", help="token statistics for a dataset")
    p.add_argument("dataset")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("cost", help="cumulative cost table for one context length")
    p.add_argument("--L", type=int, required=True, metavar="TOKENS", help="history length in tokens")
    p.add_argument("--turns", type=_int_list, default=[1, 5, 10, 15, 20], metavar="N,N,...")
    p.add_argument("--out-dir", metavar="DIR", help="also write cost_curve.csv and cost_curve.png")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("breakeven", help="break-even table across context lengths")
    p.add_argument("--L", type=_int_list, required=True, metavar="TOKENS,TOKENS,...")
    p.add_argument("--out-dir", metavar="DIR", help="also write breakeven.csv and breakeven.png")
    p.set_defaults(func=_cmd_breakeven)

    p = sub.add_parser("heatmap", help="cost-difference grid over context length and turns")
    p.add_argument("--L", type=_grid_range, required=True, metavar="LO:HI:STEPS")
    p.add_argument("--N", type=_grid_range, required=True, metavar="LO:HI:STEPS")
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.add_argument("--pgm", action="store_true", help="also write a sign-mapped PGM image")
    p.set_defaults(func=_cmd_heatmap)

    return parser


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        return load_config(args.config)
    return default_run_config()


def _open_store(path: str, config: RunConfig, create: bool = False) -> MemoryStore:
    directory = Path(path)
    if (directory / "store.json").is_file():
        return MemoryStore.load(directory)
    if not create:
        raise MemcostError(f"no memory store at {directory}")
    return MemoryStore(dim=config.index.dim, params=config.index.hnsw_params())


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_ingest(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    dataset = load_dataset(args.dataset)
    store = _open_store(args.store, config, create=True)
    ledger = UsageLedger()
    extractor = build_client(config, "extractor", ledger)
    embedder = build_client(config, "embedder", ledger)
    for conversation in dataset.conversations:
        known = store.receipt_for(conversation_fingerprint(conversation)) is not None
        receipt = ingest_conversation(
            conversation,
            extractor=extractor,
            embedder=embedder,
            store=store,
            pricing=config.pricing,
            tokenizer=config.tokenizer,
        )
        status = "already ingested" if known else "ingested"
        line = f"{conversation.user_id}: {status}, records={receipt.records_created} write_cost={receipt.write_cost}"
        if receipt.partial:
            line += f" partial(failed segments: {', '.join(map(str, receipt.failed_seq_nos))})"
        print(line)
    store.save(args.store)
    print(f"store: {store.record_count()} records across {len(store.user_ids())} user(s) at {args.store}")
    print(ledger.summary_line(config.pricing))
    return 0


def _cmd_query(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    store = _open_store(args.store, config)
    ledger = UsageLedger()
    reader = build_client(config, "reader", ledger)
    embedder = build_client(config, "embedder", ledger)
    question = Question(id="query", text=args.question, golden_answer="(interactive)", user_id=args.user_id)
    trace = answer_with_memory(
        question,
        args.user_id,
        store,
        reader=reader,
        embedder=embedder,
        pricing=config.pricing,
        top_k=args.top_k,
        tokenizer=config.tokenizer,
    )
    print(trace.answer_text)
    if trace.flags:
        print(f"flags: {', '.join(trace.flags)}", file=sys.stderr)
    print(f"retrieved tokens: {trace.retrieved_token_count} | read cost: {trace.read_cost}")
    print(ledger.summary_line(config.pricing))
    return 0


def _eval_dry_run(args: argparse.Namespace, config: RunConfig, dataset: Dataset, mode: str) -> int:
    ledger = UsageLedger()
    embedder = build_client(config, "embedder", ledger) if mode == "memory" else None
    store = _open_store(args.store, config) if mode == "memory" and args.store else None
    if mode == "memory" and store is None:
        raise MemcostError("memory mode needs --store")
    by_user: dict[str, list[Question]] = {}
    for question in dataset.questions:
        if question.user_id is None:
            raise MemcostError(f"question {question.id} has no user_id")
        by_user.setdefault(question.user_id, []).append(question)

    answer_template = load_prompt("memory_answer" if mode == "memory" else "long_context_answer")
    total_projected = None
    for user_id, questions in sorted(by_user.items()):
        conversation = dataset.conversation_for(user_id)
        history_tokens = count_tokens(serialize_conversation(conversation), config.tokenizer)
        params = default_cost_params(history_tokens)
        if mode == "memory":
            projected = mem_cost(params, len(questions))
            vectors, _ = embedder.embed([q.text for q in questions])
            prompt_tokens = 0
            for question, vector in zip(questions, vectors):
                hits = store.search(user_id, vector, k=args.top_k)
                facts = "\n".join(f"- {record.text}" for record, _ in hits) or "(none)"
                prompt = answer_template.format(user_id=user_id, facts=facts, question=question.text)
                prompt_tokens += count_tokens(prompt, config.tokenizer)
            detail = f"reader prompts {prompt_tokens} tokens"
        else:
            projected = lc_cost(params, len(questions))
            prompt_tokens = sum(
                count_tokens(
                    answer_template.format(history=serialize_conversation(conversation), question=q.text),
                    config.tokenizer,
                )
                for q in questions
            )
            detail = f"lc prompts {prompt_tokens} tokens"
        total_projected = projected if total_projected is None else total_projected + projected
        print(
            f"{user_id}: L={history_tokens} tokens, {len(questions)} question(s),"
            f" projected {mode} cost {projected} ({detail})"
        )
    print(f"dry-run total projected cost: {total_projected}")
    print(ledger.summary_line(config.pricing))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    dataset = load_dataset(args.dataset)
    mode = "long_context" if args.mode == "lc" else args.mode
    if args.dry_run:
        return _eval_dry_run(args, config, dataset, mode)

    ledger = UsageLedger()
    judge = build_client(config, "judge", ledger)
    store = reader = embedder = lc_backend = None
    if mode == "memory":
        if not args.store:
            raise MemcostError("memory mode needs --store")
        store = _open_store(args.store, config)
        reader = build_client(config, "reader", ledger)
        embedder = build_client(config, "embedder", ledger)
    else:
        lc_backend = build_client(config, "long_context", ledger)
    result = run_eval(
        dataset.questions,
        dataset.conversations,
        mode,
        store=store,
        reader=reader,
        lc_backend=lc_backend,
        embedder=embedder,
        judge=judge,
        pricing=config.pricing,
        top_k=args.top_k,
        concurrency=config.concurrency,
    )
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_results_jsonl(result, out_dir / "results.jsonl")
        write_summary_json(result, out_dir / "summary.json")
        print(f"wrote {out_dir / 'results.jsonl'} and {out_dir / 'summary.json'}")
    print(
        f"{mode}: {len(result.outcomes)} questions, accuracy {result.accuracy_pct:.2f}%,"
        f" read cost {result.total_read_cost}"
    )
    print(ledger.summary_line(config.pricing))
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    dataset = load_dataset(args.dataset)
    sessions = sum(len(c.sessions) for c in dataset.conversations)
    messages = sum(len(c.all_messages()) for c in dataset.conversations)
    print(f"conversations: {len(dataset.conversations)} | sessions: {sessions} | messages: {messages}")
    conv = dataset_stats(dataset.conversations, config.tokenizer)
    print(
        f"conversation tokens: n={conv.n} min={conv.min} max={conv.max}"
        f" median={conv.median} mean={conv.mean}"
    )
    if dataset.questions:
        q = dataset_stats(dataset.questions, config.tokenizer)
        print(f"question tokens: n={q.n} min={q.min} max={q.max} median={q.median} mean={q.mean}")
    else:
        print("question tokens: none")
    return 0


def _cmd_cost(args: argparse.Namespace) -> int:
    params = default_cost_params(args.L)
    curve = cost_curve(params, args.turns)
    print(f"L = {curve.context_tokens} tokens")
    print(f"{'N':>6}  {'memory_usd':>12}  {'long_context_usd':>16}")
    for point in curve.points:
        print(f"{point.n:>6}  {point.memory.format(4):>12}  {point.long_context.format(4):>16}")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_cost_curve_csv(curve, out_dir / "cost_curve.csv")
        # Figure rendering imports matplotlib; only figure-writing paths pay that.
        from .report import render_cost_curves

        render_cost_curves(curve, out_dir / "cost_curve.png")
        print(f"wrote {out_dir / 'cost_curve.csv'} and {out_dir / 'cost_curve.png'}")
    return 0


def _cmd_breakeven(args: argparse.Namespace) -> int:
    rows = sensitivity_table(args.L)
    print(f"{'L':>8}  {'write_usd':>10}  {'lc_turn1_usd':>12}  {'lc_turn_n_usd':>13}  {'n_be':>5}")
    for row in rows:
        n_be = "-" if row.n_be is None else str(row.n_be)
        print(
            f"{row.context_tokens:>8}  {row.write_cost.format(4):>10}"
            f"  {row.lc_turn1.format(4):>12}  {row.lc_turn_n.format(4):>13}  {n_be:>5}"
        )
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_sensitivity_csv(rows, out_dir / "breakeven.csv")
        from .report import render_breakeven

        render_breakeven(rows, out_dir / "breakeven.png")
        print(f"wrote {out_dir / 'breakeven.csv'} and {out_dir / 'breakeven.png'}")
    return 0


def _cmd_heatmap(args: argparse.Namespace) -> int:
    grid = heatmap_grid(args.L, args.N)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(grid, out_dir / "heatmap.csv")
    write_boundary_csv(grid, out_dir / "boundary.csv")
    from .report import render_heatmap

    render_heatmap(grid, out_dir / "heatmap.png")
    written = ["heatmap.csv", "boundary.csv", "heatmap.png"]
    if args.pgm:
        write_heatmap_pgm(grid, out_dir / "heatmap.pgm")
        written.append("heatmap.pgm")
    crossing = [n for _, n in grid.boundary if n is not None]
    summary = (
        f"break-even within grid for {len(crossing)}/{len(grid.boundary)} context lengths"
        + (f" (n_be {min(crossing)}..{max(crossing)})" if crossing else "")
    )
    print(f"grid: {len(grid.l_values)} context lengths x {len(grid.n_values)} turn counts | {summary}")
    print(f"wrote {', '.join(str(out_dir / name) for name in written)}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and --version exit through argparse
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MemcostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
