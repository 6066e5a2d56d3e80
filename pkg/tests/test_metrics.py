import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikekit.metrics import (
    mse,
    psnr,
    quality,
    replay_event_log,
    ssim,
    throughput_report,
)
from spikekit.pipeline import PipelineStats


def ssim_oracle(a, b, window=8, k1=0.01, k2=0.03):
    """Textbook SSIM per tile with explicit loops."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c1, c2 = (k1 * 255) ** 2, (k2 * 255) ** 2
    vals = []
    for y in range(0, a.shape[0] - window + 1, window):
        for x in range(0, a.shape[1] - window + 1, window):
            pa = a[y:y + window, x:x + window].ravel()
            pb = b[y:y + window, x:x + window].ravel()
            n = pa.size
            ma, mb = sum(pa) / n, sum(pb) / n
            va = sum((p - ma) ** 2 for p in pa) / n
            vb = sum((p - mb) ** 2 for p in pb) / n
            cov = sum((p - ma) * (q - mb) for p, q in zip(pa, pb)) / n
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def test_psnr_identical_is_inf(rng):
    img = rng.integers(0, 256, (16, 16))
    assert psnr(img, img) == math.inf


def test_psnr_off_by_one():
    a = np.full((8, 8), 100)
    assert mse(a, a + 1) == 1.0
    assert psnr(a, a + 1) == pytest.approx(10 * math.log10(255**2), abs=1e-12)
    assert round(psnr(a, a + 1), 2) == 48.13


def test_psnr_extremes():
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 255)) == 0.0


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        psnr(np.zeros((0, 0)), np.zeros((0, 0)))


@given(seed=st.integers(0, 2**32 - 1))
def test_psnr_symmetric_and_decreasing(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, (8, 8)).astype(float)
    b = np.clip(a + rng.integers(-20, 21, (8, 8)), 0, 255)
    assert psnr(a, b) == psnr(b, a)
    worse = b.copy()
    k = int(np.argmax(np.abs(worse - a) < 200))
    worse.flat[k] = 255 if a.flat[k] < 128 else 0
    if mse(a, worse) > mse(a, b):
        assert psnr(a, worse) < psnr(a, b)


def test_ssim_identical(rng):
    img = rng.integers(0, 256, (24, 24))
    assert ssim(img, img) == pytest.approx(1.0)


def test_ssim_matches_oracle(rng):
    a = rng.integers(0, 256, (16, 24))
    b = np.clip(a + rng.integers(-30, 31, a.shape), 0, 255)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), rel=1e-12)


def test_ssim_shift_monotone(rng):
    ref = rng.integers(0, 200, (32, 32))
    values = [ssim(ref, ref + shift) for shift in (10, 20, 40)]
    assert all(0 < v < 1 for v in values)
    assert values[0] > values[1] > values[2]
    assert values[0] == pytest.approx(ssim_oracle(ref, ref + 10), rel=1e-12)


def test_ssim_black_white_near_zero():
    v = ssim(np.zeros((8, 8)), np.full((8, 8), 255))
    assert v == pytest.approx(ssim_oracle(np.zeros((8, 8)), np.full((8, 8), 255)))
    assert 0 <= v < 1e-3


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((7, 8)), np.zeros((7, 8)))


@given(seed=st.integers(0, 2**32 - 1))
def test_ssim_symmetric_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 256, (16, 16))
    b = rng.integers(0, 256, (16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)
    assert -1 <= ssim(a, b) <= 1


def test_quality_report(rng):
    a = rng.integers(0, 256, (8, 8))
    r = quality(a, a)
    assert r.psnr_db == math.inf and r.mse == 0 and r.ssim == pytest.approx(1.0)


def _stats(produced, dropped):
    s = PipelineStats()
    s.produced, s.dropped, s.delivered = produced, dropped, produced - dropped
    return s


def test_throughput_report():
    r = throughput_report(_stats(40_000, 0), 1.0)
    assert r.fps == 40_000 and r.drop_ratio == 0
    assert throughput_report(_stats(100, 25), 2.0).drop_ratio == 0.25
    with pytest.raises(ValueError):
        throughput_report(_stats(1, 0), 0)


def test_event_log_replay():
    events = [(0.0, "produced", 0), (0.1, "delivered", 0), (0.2, "produced", 1), (0.3, "dropped", 1)]
    counts = replay_event_log(events)
    assert counts == {"produced": 2, "delivered": 1, "dropped": 1}
    assert throughput_report(_stats(counts["produced"], counts["dropped"]), 0.3).drop_ratio == 0.5
