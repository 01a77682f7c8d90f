"""Node growth under composition for a grid of size filters.

For each (max_steps, max_vars) pair, extends the temporal graph to its
fixed point and prints per-round added-node counts plus the plateau size.
Useful for picking filter settings that keep the graph tractable.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import importlib.resources as res

from finsynth.graph import add_temporal, build_graph, extend_to_fixed_point, load_seed_formulas


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--slices", type=int, default=2)
    parser.add_argument("--steps", type=int, nargs="+", default=[2, 3, 4])
    parser.add_argument("--vars", type=int, nargs="+", default=[3, 4, 5])
    parser.add_argument("--rounds", type=int, default=6)
    args = parser.parse_args()

    seed_path = str(res.files("finsynth").joinpath("data/seed_formulas.txt"))
    nodes, _ = load_seed_formulas(seed_path)
    base = build_graph(nodes)
    if args.slices:
        base = add_temporal(base, [f"t{i + 1}" for i in range(args.slices)])
    print(f"base graph: {len(base.nodes)} nodes")
    print(f"{'max_steps':>10} {'max_vars':>9} {'rounds':>7} {'plateau':>8}  per-round added")
    for max_steps in args.steps:
        for max_vars in args.vars:
            graph, counts = extend_to_fixed_point(
                base, max_steps=max_steps, max_vars=max_vars, max_rounds=args.rounds
            )
            fixed = bool(counts) and counts[-1] == 0 or not counts
            mark = "" if fixed else " (cap hit)"
            print(
                f"{max_steps:>10} {max_vars:>9} {len(counts):>7} {len(graph.nodes):>8}"
                f"  {counts}{mark}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
