"""Walk the cake/jeans/cake example through the pipeline and print each step."""

import argparse
import json
import logging

from recmem.engine import EngineConfig, RecMemEngine
from recmem.fixtures import CAKE_FOLLOW_UP, CAKE_JEANS_CAKE, GOLDEN_THETA_SIM
from recmem.subconscious import ConsolidationConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--theta-sim", type=float, default=GOLDEN_THETA_SIM)
    ap.add_argument("--theta-count", type=int, default=2)
    ap.add_argument("--follow-up", action="store_true", help="also ingest a fourth cake turn (merge path)")
    ap.add_argument("--snapshot", help="write the final state here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = EngineConfig(consolidation=ConsolidationConfig(args.theta_sim, args.theta_count))
    eng = RecMemEngine(cfg, "worked-example")
    turns = CAKE_JEANS_CAKE + ([CAKE_FOLLOW_UP] if args.follow_up else [])
    for u in turns:
        out = eng.ingest(u)
        print(f"{u.turn_id}: merged_into={out.merged_into} triggered={out.triggered} "
              f"episodes={out.episodes} facts={out.facts}")

    for ep in eng.episodic.episodes():
        print(f"\n{ep.episode_id} (rev {ep.revision}) {ep.time_span[0]} .. {ep.time_span[1]}")
        print(ep.text())
    print("\nfacts:")
    for f in eng.semantic.facts():
        print(f"  {f.fact_id} {f.text!r} from {f.source_turn_ids}")

    res = eng.answer("What is Mia allergic to?", "q1")
    print(f"\nanswer: {res.text}")
    print(json.dumps(eng.report(), indent=2))
    if args.snapshot:
        print("snapshot:", eng.snapshot(args.snapshot))


if __name__ == "__main__":
    main()
