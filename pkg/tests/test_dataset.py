import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikekit.codec import CorruptFileError, MetaSchemaError, StreamMeta, write_dat, write_meta
from spikekit.dataset import (
    UnmatchedLabelsWarning,
    load_block_via_full,
    load_sample,
    read_manifest,
    scan,
    write_manifest,
)
from spikekit.imageio import write_pgm

from conftest import random_stream

H, W = 6, 10


def make_dataset(root, n_dat=3, n_gt=0, frames=(20, 35, 50), seed=0):
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    write_meta(StreamMeta(W, H), root / f"{root.name}.info")
    streams = {}
    for k in range(n_dat):
        stem = f"s{k:02d}"
        streams[stem] = random_stream(rng, H, W, frames[k % len(frames)])
        write_dat(streams[stem], root / f"{stem}.dat")
    if n_gt:
        (root / "gt").mkdir()
        for k in range(n_gt):
            write_pgm(rng.integers(0, 256, (H, W)), root / "gt" / f"s{k:02d}.pgm")
    return streams


def test_scan_raw(tmp_path):
    make_dataset(tmp_path / "ds")
    desc = scan(tmp_path / "ds")
    assert desc.label_type == "raw" and len(desc) == 3
    assert [s.num_steps for s in desc.samples] == [20, 35, 50]
    assert all(s.label_path is None for s in desc.samples)
    d = desc.data_parameter_dict()
    assert (d["spike_h"], d["spike_w"]) == (H, W) and len(d["path_list"]) == 3


def test_scan_image_labels(tmp_path):
    make_dataset(tmp_path / "ds", n_gt=3)
    desc = scan(tmp_path / "ds")
    assert desc.label_type == "image"
    sample = load_sample(desc, 1)
    assert sample.label.shape == (H, W) and sample.spikes.num_steps == 35


def test_scan_partial_labels_warns(tmp_path):
    make_dataset(tmp_path / "ds", n_gt=2)
    with pytest.warns(UnmatchedLabelsWarning, match="s02"):
        desc = scan(tmp_path / "ds")
    assert desc.label_type == "raw"
    assert desc.samples[0].label_path is not None and desc.samples[2].label_path is None


def test_scan_missing_meta(tmp_path):
    make_dataset(tmp_path / "ds")
    (tmp_path / "ds" / "ds.info").unlink()
    with pytest.raises(MetaSchemaError):
        scan(tmp_path / "ds")


def test_scan_geometry_mismatch(tmp_path):
    make_dataset(tmp_path / "ds")
    (tmp_path / "ds" / "s01.dat").write_bytes(b"\x00" * 17)  # 8 bytes per frame
    with pytest.raises(CorruptFileError, match="s01"):
        scan(tmp_path / "ds")


def test_label_shape_mismatch(tmp_path):
    make_dataset(tmp_path / "ds", n_gt=3)
    write_pgm(np.zeros((H + 1, W)), tmp_path / "ds" / "gt" / "s00.pgm")
    with pytest.raises(ValueError, match="label shape"):
        load_sample(scan(tmp_path / "ds"), 0)


def test_load_sample_errors(tmp_path):
    make_dataset(tmp_path / "ds")
    desc = scan(tmp_path / "ds")
    with pytest.raises(IndexError):
        load_sample(desc, 3)
    with pytest.raises(IndexError):
        load_sample(desc, 0, block=(15, 10))


def test_full_load_matches_written(tmp_path):
    streams = make_dataset(tmp_path / "ds")
    desc = scan(tmp_path / "ds")
    for i, entry in enumerate(desc.samples):
        assert load_sample(desc, i).spikes == streams[entry.stem]


@given(data=st.data())
def test_block_load_equivalence(tmp_path_factory, data):
    root = tmp_path_factory.mktemp("blk") / "ds"
    make_dataset(root, seed=data.draw(st.integers(0, 1000)))
    desc = scan(root)
    i = data.draw(st.integers(0, len(desc) - 1))
    t = desc.samples[i].num_steps
    start = data.draw(st.integers(0, t))
    length = data.draw(st.integers(0, t - start))
    assert load_sample(desc, i, block=(start, length)).spikes == load_block_via_full(desc, i, start, length)


def test_scan_is_deterministic(tmp_path):
    make_dataset(tmp_path / "ds", n_gt=3)
    a, b = scan(tmp_path / "ds"), scan(tmp_path / "ds")
    assert a == b
    assert [s.stem for s in a.samples] == sorted(s.stem for s in a.samples)


def test_manifest_round_trip(tmp_path):
    make_dataset(tmp_path / "ds", n_gt=3)
    desc = scan(tmp_path / "ds")
    path = write_manifest(desc)
    assert path.name == "dataset.manifest"
    assert read_manifest(path) == desc


def test_manifest_missing_key(tmp_path):
    (tmp_path / "m").write_text("name = x\n")
    with pytest.raises(MetaSchemaError, match="root"):
        read_manifest(tmp_path / "m")


def test_no_warning_without_gt_dir(tmp_path):
    make_dataset(tmp_path / "ds")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        scan(tmp_path / "ds")
