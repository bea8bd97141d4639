"""Construction cost of recurrence-triggered versus eager consolidation.

Varies the share of turns that belong to recurring topics and reports the
stub-token ratio recurrence / eager for each share.
"""

import argparse

from recmem.engine import EngineConfig, RecMemEngine
from recmem.fixtures import StreamSpec, synthetic_stream
from recmem.subconscious import ConsolidationConfig


def cost(units, mode, theta_sim, theta_count):
    cfg = EngineConfig(consolidation=ConsolidationConfig(theta_sim, theta_count), mode=mode)
    eng = RecMemEngine(cfg, mode)
    s = eng.ingest_many(units)
    return s.construction_usage.total, eng.ledger.construction_calls(mode)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--turns", type=int, default=100)
    ap.add_argument("--topics", type=int, default=3)
    ap.add_argument("--theta-sim", type=float, default=0.5)
    ap.add_argument("--theta-count", type=int, default=5)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    print(f"{'recurring':>9} {'rec_tokens':>10} {'eager_tokens':>12} {'ratio':>6} {'rec_calls':>9} {'eager_calls':>11}")
    for share in (0.1, 0.2, 0.3, 0.5, 0.7, 0.9):
        per_topic = int(args.turns * share) // args.topics
        rt = et = rc = ec = 0
        for seed in range(args.seeds):
            units = synthetic_stream(StreamSpec(args.turns, [per_topic] * args.topics, seed=seed))
            t, c = cost(units, "recurrence", args.theta_sim, args.theta_count)
            rt, rc = rt + t, rc + c
            t, c = cost(units, "eager", args.theta_sim, args.theta_count)
            et, ec = et + t, ec + c
        print(f"{share:>9.0%} {rt / args.seeds:>10.0f} {et / args.seeds:>12.0f} {rt / et:>6.3f} "
              f"{rc / args.seeds:>9.1f} {ec / args.seeds:>11.1f}")


if __name__ == "__main__":
    main()
