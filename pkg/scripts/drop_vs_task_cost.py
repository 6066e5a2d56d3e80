"""Measured drop ratio against task cost, next to an idle-gate event model.

Pieces arrive every t_cusum / rate seconds. In the model a piece is
delivered only if the previous delivered piece has finished.

    python3 scripts/drop_vs_task_cost.py --costs 0,5,10,15,25,40
"""

import argparse
import sys
import time

import numpy as np

from spikekit.pipeline import Pipeline, PipelineConfig, stream_source
from spikekit.stream import StreamGeometry, from_packed


def model_drop_ratio(n_pieces: int, period: float, cost: float) -> float:
    busy_until, delivered = -1.0, 0
    for k in range(n_pieces):
        if k * period >= busy_until:
            delivered += 1
            busy_until = k * period + cost
    return 1 - delivered / n_pieces


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--costs", default="0,5,10,15,25,40", help="task cost in ms")
    p.add_argument("--rate", type=float, default=40_000.0)
    p.add_argument("--t-cusum", type=int, default=400)
    p.add_argument("--pieces", type=int, default=100)
    p.add_argument("--height", type=int, default=50)
    p.add_argument("--width", type=int, default=80)
    args = p.parse_args()

    g = StreamGeometry(args.height, args.width, args.t_cusum * args.pieces)
    data = np.random.default_rng(0).integers(0, 256, g.nbytes, dtype=np.uint8)
    stream = from_packed(data, g)
    period = args.t_cusum / args.rate

    print(f"{'cost_ms':>7} {'measured':>9} {'model':>7}")
    for cost_ms in (float(c) for c in args.costs.split(",")):
        def task(_stream, cost=cost_ms / 1000):
            if cost:
                time.sleep(cost)

        cfg = PipelineConfig(t_cusum=args.t_cusum, block_frames=args.t_cusum, keep_events=False)
        stats = Pipeline(stream_source(stream, args.rate, args.t_cusum), args.height, args.width,
                         {"task": task}, cfg).run()
        measured = stats.dropped / stats.produced
        print(f"{cost_ms:>7.1f} {measured:>9.3f} {model_drop_ratio(args.pieces, period, cost_ms / 1000):>7.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
