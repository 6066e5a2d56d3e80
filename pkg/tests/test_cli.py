import json
import subprocess
import sys

import numpy as np
import pytest

from spikekit.cli import main, synthetic_pool
from spikekit.codec import StreamMeta, write_dat, write_meta
from spikekit.imageio import read_gray, write_pgm
from spikekit.stream import StreamGeometry, from_packed

from conftest import random_stream


def run(capsys, *argv):
    code = main(["--quiet", *map(str, argv)])
    captured = capsys.readouterr()
    values = {}
    for line in captured.out.splitlines():
        if "=" in line and not line.startswith("#"):
            k, _, v = line.partition("=")
            values[k] = v
    return code, values, captured


def write_stream(path, stream):
    write_dat(stream, path)
    write_meta(StreamMeta(stream.width, stream.height), path.with_suffix(".info"))
    return path


def test_help_and_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["play", "x.dat", "--rate", "0"])
    assert exc.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "spikekit", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "spikekit" in proc.stdout


def test_simulate_constant_image(tmp_path, capsys):
    (tmp_path / "img").mkdir()
    write_pgm(np.full((8, 12), 128), tmp_path / "img" / "a.pgm")
    code, out, _ = run(capsys, "simulate", tmp_path / "img", tmp_path / "out" / "rec")
    assert code == 0
    assert out["frames"] == "255" and out["count_min"] == out["count_max"] == "128"
    assert (tmp_path / "out" / "rec.dat").stat().st_size == 255 * 12
    assert (tmp_path / "out" / "rec.info").exists()


def test_simulate_missing_dir(tmp_path, capsys):
    code, _, captured = run(capsys, "simulate", tmp_path / "nope", tmp_path / "x")
    assert code == 1 and "not found" in captured.err


def test_reconstruct_missing_file(tmp_path, capsys):
    code, _, captured = run(capsys, "reconstruct", tmp_path / "none.dat")
    assert code == 1 and "error:" in captured.err


def test_reconstruct_tfi_all_firing(tmp_path, capsys):
    dat = write_stream(tmp_path / "ones.dat", from_packed(b"\xff" * 40, StreamGeometry(2, 4, 40)))
    code, out, _ = run(capsys, "reconstruct", dat, "--method", "tfi", "--out", tmp_path / "o.pgm")
    assert code == 0 and out["mean_gray"] == "255"
    assert read_gray(tmp_path / "o.pgm").min() == 255


def test_reconstruct_gamma_one_is_identity(tmp_path, capsys, rng):
    dat = write_stream(tmp_path / "r.dat", random_stream(rng, 8, 8, 300))
    run(capsys, "reconstruct", dat, "--out", tmp_path / "a.pgm")
    run(capsys, "reconstruct", dat, "--gamma", "1", "--out", tmp_path / "b.pgm")
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    run(capsys, "reconstruct", dat, "--gamma", "2", "--out", tmp_path / "c.pgm")
    assert read_gray(tmp_path / "c.pgm").mean() > read_gray(tmp_path / "a.pgm").mean()


def test_reconstruct_sliding_outputs(tmp_path, capsys, rng):
    dat = write_stream(tmp_path / "r.dat", random_stream(rng, 4, 4, 100))
    code, out, _ = run(capsys, "reconstruct", dat, "--window", "50", "--stride", "25",
                       "--out", tmp_path / "s.pgm")
    assert code == 0 and out["images"] == "3"
    assert sorted(p.name for p in tmp_path.glob("s_*.pgm")) == ["s_0000.pgm", "s_0001.pgm", "s_0002.pgm"]


def test_simulate_then_reconstruct_fidelity(tmp_path, capsys, rng):
    (tmp_path / "img").mkdir()
    gt = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    write_pgm(gt, tmp_path / "img" / "g.pgm")
    write_pgm(gt, tmp_path / "gt.pgm")
    run(capsys, "simulate", tmp_path / "img", tmp_path / "sim")
    code, out, _ = run(capsys, "reconstruct", tmp_path / "sim.dat", "--gt", tmp_path / "gt.pgm")
    assert code == 0 and float(out["psnr_db"]) >= 40 and float(out["ssim"]) > 0.99


def test_play_no_tasks_drops_everything(tmp_path, capsys, rng):
    dat = write_stream(tmp_path / "p.dat", random_stream(rng, 4, 8, 400))
    code, out, _ = run(capsys, "play", dat, "--tasks", "none", "--t-cusum", "40", "--block-frames", "40",
                       "--rate", "100000")
    assert code == 0
    assert out["produced"] == out["dropped"] == "10" and out["delivered"] == "0"


def test_play_conservation_json(tmp_path, capsys, rng):
    dat = write_stream(tmp_path / "p.dat", random_stream(rng, 4, 8, 800))
    code = main(["--json", "play", str(dat), "--tasks", "count,tfp", "--task-cost-ms", "3",
                 "--t-cusum", "40", "--block-frames", "40", "--rate", "20000", "--log-indices",
                 "--save-dir", str(tmp_path / "frames")])
    data = json.loads(capsys.readouterr().out)
    assert code == 0
    assert data["produced"] == 20 == data["delivered"] + data["dropped"]
    assert data["task.count.indices"] == data["task.tfp.indices"]
    assert len(list((tmp_path / "frames").glob("tfp_*.pgm"))) == data["task.tfp.processed"]
    assert data["config"]["rate"] == 20000.0


def test_play_block_file(tmp_path, capsys, rng):
    from spikekit.pipeline import iter_stream_blocks, write_blocks

    s = random_stream(rng, 4, 8, 120)
    with open(tmp_path / "s.blk", "wb") as fh:
        write_blocks(iter_stream_blocks(s, 40), fh)
    write_meta(StreamMeta(8, 4), tmp_path / "s.info")
    code, out, _ = run(capsys, "play", tmp_path / "s.blk", "--t-cusum", "40", "--rate", "50000")
    assert code == 0 and out["frames"] == "120" and out["produced"] == "3"


def test_play_unknown_task(tmp_path, capsys, rng):
    dat = write_stream(tmp_path / "p.dat", random_stream(rng, 4, 8, 10))
    code, _, captured = run(capsys, "play", dat, "--tasks", "fft")
    assert code == 1 and "unknown task" in captured.err


def test_bench_json(capsys):
    code = main(["--json", "--seed", "1", "bench", "--synthetic", "--height", "20", "--width", "40",
                 "--frames", "2000", "--rate-sweep", "20000", "--block-frames", "100", "--t-cusum", "100"])
    data = json.loads(capsys.readouterr().out)
    assert code == 0
    assert [p["rate"] for p in data["points"]] == [20000.0, "max"]
    first = data["points"][0]
    assert first["frames"] == 2000 and first["produced"] == first["delivered"] + first["dropped"]
    assert data["ceiling_fps"] == max(p["ingest_fps"] for p in data["points"])


def test_synthetic_pool_density():
    pool = synthetic_pool(50, 80, 20, seed=0)
    density = np.bitwise_count(pool).sum() / pool.size / 8
    assert abs(density - 1 / 8) < 0.01


def test_inspect(tmp_path, capsys, rng):
    zeros = write_stream(tmp_path / "z.dat", from_packed(bytes(30), StreamGeometry(3, 5, 15)))
    ones = write_stream(tmp_path / "o.dat", from_packed(b"\xff" * 20, StreamGeometry(4, 4, 10)))
    s = random_stream(rng, 7, 9, 33)
    rand = write_stream(tmp_path / "r.dat", s)
    _, out, _ = run(capsys, "inspect", zeros)
    assert out["density"] == "0" and out["frames"] == "15"
    _, out, _ = run(capsys, "inspect", ones)
    assert out["density"] == "1" and out["frame_density_hist"].split(",")[-1] == "10"
    _, out, _ = run(capsys, "inspect", rand, "--bins", "4")
    assert float(out["density"]) == pytest.approx(s.total_spikes() / (33 * 63), rel=1e-5)
    assert sum(map(int, out["frame_density_hist"].split(","))) == 33
    assert out["duration_s"] == f"{33 * 25e-6:.6g}"


def test_config_block_printed_unless_quiet(tmp_path, capsys):
    dat = write_stream(tmp_path / "z.dat", from_packed(bytes(2), StreamGeometry(1, 8, 2)))
    main(["inspect", str(dat)])
    assert "# command=inspect" in capsys.readouterr().out
    main(["--quiet", "inspect", str(dat)])
    assert "#" not in capsys.readouterr().out


def test_play_index_logs_repeatable(tmp_path, capsys, rng):
    dat = write_stream(tmp_path / "p.dat", random_stream(rng, 4, 8, 400))
    logs = []
    for _ in range(2):
        main(["--json", "play", str(dat), "--tasks", "count,noop", "--t-cusum", "40", "--block-frames", "40",
              "--rate", "8000", "--log-indices"])
        data = json.loads(capsys.readouterr().out)
        assert data["dropped"] == 0
        logs.append((data["task.count.indices"], data["task.noop.indices"]))
    assert logs[0] == logs[1] == ((list(range(10)),) * 2)


def test_bench_drop_ratio_grows_with_rate(capsys):
    # piece every 50 / 12.5 / 3.1 ms against a 20 ms task
    main(["--json", "bench", "--synthetic", "--height", "8", "--width", "16", "--frames", "1600",
          "--rate-sweep", "2000,8000,32000", "--no-ceiling", "--t-cusum", "100", "--block-frames", "100",
          "--task-cost-ms", "20"])
    ratios = [p["drop_ratio"] for p in json.loads(capsys.readouterr().out)["points"]]
    assert ratios[0] == 0
    assert ratios[0] <= ratios[1] <= ratios[2] and ratios[2] > 0.5
