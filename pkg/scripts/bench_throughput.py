"""Ingestion throughput sweep at camera resolution; writes a JSON table.

    python3 scripts/bench_throughput.py --rates 10000,20000,40000,80000 --out bench.json
"""

import argparse
import contextlib
import io
import json
import sys
from pathlib import Path

from spikekit.cli import main as cli


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rates", default="10000,20000,40000,80000")
    p.add_argument("--frames", type=int, default=40_000)
    p.add_argument("--height", type=int, default=250)
    p.add_argument("--width", type=int, default=400)
    p.add_argument("--t-cusum", type=int, default=400)
    p.add_argument("--task-cost-ms", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    return p.parse_args()


def main() -> int:
    args = parse_args()
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli(["--json", "--seed", str(args.seed), "bench", "--synthetic",
                    "--height", str(args.height), "--width", str(args.width),
                    "--frames", str(args.frames), "--rate-sweep", args.rates,
                    "--t-cusum", str(args.t_cusum), "--block-frames", str(args.t_cusum),
                    "--task-cost-ms", str(args.task_cost_ms)])
    if code:
        return code
    result = json.loads(buf.getvalue())
    print(f"{'rate':>8} {'ingest_fps':>11} {'MB/s':>7} {'drop':>6} sustained")
    for row in result["points"]:
        rate = row["rate"] if row["rate"] == "max" else f"{row['rate']:.0f}"
        print(f"{rate:>8} {row['ingest_fps']:>11.0f} {row['unpacked_mb_s']:>7.0f} "
              f"{row['drop_ratio']:>6.3f} {row['sustained']}")
    print(f"ceiling: {result['ceiling_fps']:.0f} fps")
    if args.out:
        args.out.write_text(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
