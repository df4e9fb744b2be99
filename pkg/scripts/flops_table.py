"""Attention multiply-adds for P in {1, 2, 4} at a given feature resolution."""

import argparse

from ordnet.analysis import flops_estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--hw", type=int, nargs=2, default=[60, 60])
    ap.add_argument("--c", type=int, default=2048)
    ap.add_argument("--cq", type=int, default=256)
    ap.add_argument("--cv", type=int, default=512)
    args = ap.parse_args()
    h, w = args.hw
    base = flops_estimate(h, w, args.c, args.cq, args.cq, args.cv, 1)
    print(f"{'P':>2} {'proj G':>8} {'map G':>8} {'agg G':>8} {'out G':>8} {'total G':>8} {'quad ratio':>10}")
    for p in (1, 2, 4):
        r = flops_estimate(h, w, args.c, args.cq, args.cq, args.cv, p)
        g = [v / 1e9 for v in (r.projections, r.attention_map, r.aggregation, r.output_projection, r.total)]
        print(f"{p:>2} " + " ".join(f"{v:>8.2f}" for v in g) + f" {base.quadratic / r.quadratic:>10g}")


if __name__ == "__main__":
    main()
