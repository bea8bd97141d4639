"""Consolidation count and construction tokens over theta_count and theta_sim.

Runs a synthetic stream once per setting and prints a table; with --plot it
also writes a PNG (needs matplotlib, which the package itself does not use).
"""

import argparse
import json

from recmem.engine import EngineConfig, RecMemEngine
from recmem.fixtures import StreamSpec, synthetic_stream
from recmem.subconscious import ConsolidationConfig

TOPICS = [30, 20, 15, 12, 10, 8, 6, 5, 4, 3]


def run(units, theta_sim, theta_count):
    cfg = EngineConfig(consolidation=ConsolidationConfig(theta_sim, theta_count, neighbor_k=max(10, theta_count)))
    eng = RecMemEngine(cfg, "sweep")
    s = eng.ingest_many(units)
    return {"theta_sim": theta_sim, "theta_count": theta_count, "merges": s.merges,
            "consolidations": s.consolidations, "facts": s.facts,
            "construction_tokens": s.construction_usage.total}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--turns", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write rows to this file")
    ap.add_argument("--plot", help="write a PNG here")
    args = ap.parse_args()

    units = synthetic_stream(StreamSpec(args.turns, TOPICS, seed=args.seed))
    by_count = [run(units, 0.5, c) for c in range(2, 9)]
    by_sim = [run(units, t, 5) for t in (0.5, 0.6, 0.7, 0.8, 0.9)]

    print(f"{'theta_sim':>9} {'theta_count':>11} {'merges':>6} {'consol':>6} {'facts':>5} {'tokens':>8}")
    for r in by_count + by_sim:
        print(f"{r['theta_sim']:>9.2f} {r['theta_count']:>11d} {r['merges']:>6d} {r['consolidations']:>6d} "
              f"{r['facts']:>5d} {r['construction_tokens']:>8d}")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"theta_count": by_count, "theta_sim": by_sim}, fh, indent=2)
    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        axes[0].plot([r["theta_count"] for r in by_count], [r["construction_tokens"] for r in by_count], "o-")
        axes[0].set_xlabel("theta_count")
        axes[1].plot([r["theta_sim"] for r in by_sim], [r["construction_tokens"] for r in by_sim], "o-")
        axes[1].set_xlabel("theta_sim")
        for ax in axes:
            ax.set_ylabel("construction tokens (stub)")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
