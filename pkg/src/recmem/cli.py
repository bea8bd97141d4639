"""Command-line driver.

    recmem ingest   --dataset conv.jsonl [--out snapshots/]
    recmem query    --snapshot snapshots/<conversation_id> --question "..."
    recmem bench    --dataset conv.jsonl [--sweep-theta-count 2,3,4,5]
    recmem snapshot --dataset conv.jsonl --out snapshots/
    recmem restore  --snapshot snapshots/<conversation_id>

Settings come from ``--config`` (JSON with the EngineConfig fields) and are
overridden by the individual flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from .datasets import FORMATS, ConversationRecord, Question, load_dataset
from .engine import MODES, EngineConfig, RecMemEngine
from .errors import RecMemError
from .harness import bench, run_all, run_questions

log = logging.getLogger("recmem")


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with EngineConfig fields")
    common.add_argument("--dataset", help="conversation dataset path")
    common.add_argument("--format", choices=FORMATS, default="native-jsonl")
    common.add_argument("--questions", help="questions file for native-jsonl (default: <dataset>.questions.jsonl)")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--theta-sim", type=float)
    common.add_argument("--theta-count", type=int)
    common.add_argument("--k-sub", type=int)
    common.add_argument("--k-epi", type=int, help="episodic budget; the semantic budget follows as 2 * k_epi")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="conversations processed in parallel")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="recmem", description="Recurrence-triggered conversational memory.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="stream a dataset through the engine and print ingest summaries")

    q = sub.add_parser("query", parents=[common], help="answer questions from a snapshot or a freshly ingested dataset")
    q.add_argument("--snapshot", help="snapshot directory to restore instead of ingesting")
    q.add_argument("--question", action="append", default=[], help="ad-hoc question (repeatable)")

    b = sub.add_parser("bench", parents=[common], help="compare recurrence and eager consolidation, sweep thresholds")
    b.add_argument("--modes", default="recurrence,eager")
    b.add_argument("--sweep-theta-count", type=_floats)
    b.add_argument("--sweep-theta-sim", type=_floats)
    b.add_argument("--no-questions", action="store_true")

    sub.add_parser("snapshot", parents=[common], help="ingest a dataset and write one snapshot per conversation")

    r = sub.add_parser("restore", parents=[common], help="load a snapshot and print its contents summary")
    r.add_argument("--snapshot", required=True)
    return p


def load_config(args: argparse.Namespace) -> EngineConfig:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = EngineConfig.from_json(raw)
    cons = cfg.consolidation
    if args.theta_sim is not None:
        cons.theta_sim = args.theta_sim
    if args.theta_count is not None:
        cons.theta_count = args.theta_count
        cons.neighbor_k = max(cons.neighbor_k, cons.theta_count)
    cons.__post_init__()
    if args.k_sub is not None:
        cfg.retrieval.k_sub = args.k_sub
    if args.k_epi is not None:
        cfg.retrieval.k_epi = args.k_epi
        cfg.retrieval.k_sem = 2 * args.k_epi
    if args.mode is not None:
        cfg.mode = args.mode
    if args.out is not None:
        cfg.snapshot_dir = args.out
    return cfg


def _records(args: argparse.Namespace) -> list[ConversationRecord]:
    if not args.dataset:
        raise SystemExit("--dataset is required")
    return load_dataset(args.dataset, args.format, args.questions)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _snapshot_runs(runs, out: Optional[str]) -> None:
    if not out:
        return
    for run in runs:
        path = run.engine.snapshot(Path(out) / run.conversation_id)
        log.info("snapshot written to %s", path)


def cmd_ingest(args, cfg) -> int:
    runs = run_all(_records(args), cfg, args.workers, ask=False)
    for run in runs:
        _emit(run.summary.to_json())
    _snapshot_runs(runs, args.out)
    return 0


def cmd_snapshot(args, cfg) -> int:
    if not args.out:
        raise SystemExit("snapshot needs --out")
    runs = run_all(_records(args), cfg, args.workers, ask=False)
    _snapshot_runs(runs, args.out)
    for run in runs:
        _emit({"conversation_id": run.conversation_id, "snapshot": str(Path(args.out) / run.conversation_id)})
    return 0


def cmd_restore(args, cfg) -> int:
    eng = RecMemEngine.restore(args.snapshot)
    _emit({
        "conversation_id": eng.conversation_id,
        "subconscious": len(eng.subconscious),
        "episodes": len(eng.episodic),
        "facts": len(eng.semantic),
        "live_facts": len(eng.semantic.facts(live_only=True)),
        "report": eng.report(),
    })
    return 0


def _answer_all(eng: RecMemEngine, record: ConversationRecord) -> None:
    results, report = run_questions(eng, record)
    for r in results:
        _emit({"question_id": r.question_id, "question": r.question, "answer": r.answer,
               "expected": r.expected, "usage": r.usage, "error": r.error})
    _emit({"report": report})


def cmd_query(args, cfg) -> int:
    adhoc = [Question(f"adhoc-{i:03d}", text) for i, text in enumerate(args.question)]
    records = _records(args) if args.dataset else []
    if args.snapshot:
        eng = RecMemEngine.restore(args.snapshot)
        known = [r.questions for r in records if r.conversation_id == eng.conversation_id]
        rec = ConversationRecord(eng.conversation_id, [], (known[0] if known else []) + adhoc)
        _answer_all(eng, rec)
        return 0
    if not records:
        raise SystemExit("query needs --snapshot or --dataset")
    for rec, run in zip(records, run_all(records, cfg, args.workers, ask=False)):
        _answer_all(run.engine, ConversationRecord(rec.conversation_id, rec.turns, rec.questions + adhoc))
    return 0


def cmd_bench(args, cfg) -> int:
    sweeps = {}
    if args.sweep_theta_count:
        sweeps["theta_count"] = args.sweep_theta_count
    if args.sweep_theta_sim:
        sweeps["theta_sim"] = args.sweep_theta_sim
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    rows = bench(_records(args), cfg, modes, sweeps, args.workers, ask=not args.no_questions)
    for row in rows:
        _emit(row)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "bench.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "query": cmd_query,
    "bench": cmd_bench,
    "snapshot": cmd_snapshot,
    "restore": cmd_restore,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (RecMemError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
