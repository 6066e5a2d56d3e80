import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikekit.codec import (
    CorruptFileError,
    MetaSchemaError,
    StreamMeta,
    load_stream,
    meta_path_for,
    read_dat,
    read_meta,
    write_dat,
    write_meta,
)
from spikekit.stream import StreamGeometry, from_packed

from conftest import random_packed


def test_one_frame_at_camera_resolution(tmp_path):
    # 250 x 400 pixels / 8 = 12,500 bytes per frame
    path = tmp_path / "a.dat"
    path.write_bytes(bytes(12_500))
    s = read_dat(path, StreamMeta(width=400, height=250))
    assert s.num_steps == 1
    assert (s.height, s.width) == (250, 400)


def test_empty_file(tmp_path):
    path = tmp_path / "e.dat"
    path.write_bytes(b"")
    s = read_dat(path, StreamMeta(width=400, height=250))
    assert s.num_steps == 0
    out = tmp_path / "e2.dat"
    write_dat(s, out)
    assert out.stat().st_size == 0


def test_bad_size_reports_remainder(tmp_path):
    path = tmp_path / "bad.dat"
    path.write_bytes(bytes(12_503))
    with pytest.raises(CorruptFileError, match="3 trailing bytes"):
        read_dat(path, StreamMeta(width=400, height=250))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dat(tmp_path / "nope.dat", StreamMeta(4, 4))


def test_write_size_arithmetic(tmp_path):
    g = StreamGeometry(250, 400, 100)
    s = from_packed(bytes(g.nbytes), g)
    write_dat(s, tmp_path / "big.dat")
    assert (tmp_path / "big.dat").stat().st_size == 100 * ((250 * 400 + 7) // 8) == 1_250_000


def test_write_error_has_path(tmp_path):
    s = from_packed(b"\x00", StreamGeometry(1, 8, 1))
    target = tmp_path / "missing_dir" / "x.dat"
    with pytest.raises(OSError, match="missing_dir"):
        write_dat(s, target)


@given(h=st.integers(1, 20), w=st.integers(1, 20), t=st.integers(0, 6), seed=st.integers(0, 2**32 - 1))
def test_file_round_trip_byte_exact(tmp_path_factory, h, w, t, seed):
    # random bytes including nonzero padding bits: files must come back unchanged
    data = random_packed(np.random.default_rng(seed), h, w, t, zero_padding=False)
    d = tmp_path_factory.mktemp("rt")
    src = d / "in.dat"
    src.write_bytes(data)
    meta = StreamMeta(width=w, height=h)
    s = read_dat(src, meta)
    assert s.num_steps * meta.bytes_per_frame == len(data)
    write_dat(s, d / "out.dat")
    assert (d / "out.dat").read_bytes() == data
    assert read_dat(d / "out.dat", meta) == s


def test_mmap_read_matches(tmp_path, rng):
    data = random_packed(rng, 7, 9, 11)
    (tmp_path / "m.dat").write_bytes(data)
    meta = StreamMeta(9, 7)
    assert read_dat(tmp_path / "m.dat", meta, mmap=True) == read_dat(tmp_path / "m.dat", meta)


def test_meta_round_trip_camera_interval(tmp_path):
    meta = StreamMeta(width=400, height=250, polling_interval_us=25, label_type="raw")
    write_meta(meta, tmp_path / "x.info")
    assert read_meta(tmp_path / "x.info") == meta


def test_meta_missing_height(tmp_path):
    p = tmp_path / "x.info"
    p.write_text("width = 400\n")
    with pytest.raises(MetaSchemaError, match="height"):
        read_meta(p)


def test_meta_non_integer_dimension(tmp_path):
    p = tmp_path / "x.info"
    p.write_text("width = 40.5\nheight = 3\n")
    with pytest.raises(MetaSchemaError, match="width"):
        read_meta(p)


def test_meta_defaults_and_comments(tmp_path):
    p = tmp_path / "x.info"
    p.write_text("# recorded indoors\nwidth=400\n\nheight = 250  \n")
    meta = read_meta(p)
    assert meta.polling_interval_us == 25
    assert meta.label_type == "raw"
    assert meta.extra == {}


def test_meta_extra_key_preserved(tmp_path):
    p = tmp_path / "x.info"
    p.write_text("width = 4\nheight = 4\nscene=outdoor\n")
    meta = read_meta(p)
    assert meta.extra == {"scene": "outdoor"}
    write_meta(meta, tmp_path / "y.info")
    again = read_meta(tmp_path / "y.info")
    assert again.extra == meta.extra
    assert "scene = outdoor" in (tmp_path / "y.info").read_text()


def test_meta_unknown_label_type(tmp_path):
    p = tmp_path / "x.info"
    p.write_text("width = 4\nheight = 4\nlabel_type = video\n")
    with pytest.raises(MetaSchemaError):
        read_meta(p)


_token = st.text(st.characters(whitelist_categories=("Ll", "Lu", "Nd"), whitelist_characters="_.-"),
                 min_size=1, max_size=12)


@given(
    w=st.integers(1, 5000), h=st.integers(1, 5000),
    interval=st.floats(0.001, 1e6, allow_nan=False),
    label=st.sampled_from(["raw", "image", "flow", "depth", "detection", "tracking", "recognition"]),
    extra=st.dictionaries(_token.filter(lambda k: k not in ("width", "height", "polling_interval_us",
                                                             "label_type")), _token, max_size=4),
)
def test_meta_round_trip_property(tmp_path_factory, w, h, interval, label, extra):
    meta = StreamMeta(w, h, interval, label, extra)
    p = tmp_path_factory.mktemp("meta") / "m.info"
    write_meta(meta, p)
    assert read_meta(p) == meta


def test_sidecar_discovery(tmp_path, rng):
    data = random_packed(rng, 3, 5, 4)
    (tmp_path / "rec.dat").write_bytes(data)
    write_meta(StreamMeta(5, 3), tmp_path / "rec.info")
    assert meta_path_for(tmp_path / "rec.dat") == tmp_path / "rec.info"
    s, meta = load_stream(tmp_path / "rec.dat")
    assert s.num_steps == 4 and meta.width == 5
