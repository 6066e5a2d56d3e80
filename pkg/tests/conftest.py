import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spikekit.stream import StreamGeometry, from_packed

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def oracle_bit(data: bytes, geometry: StreamGeometry, i: int, j: int, k: int) -> int:
    """Bit (i, j, k) straight from the layout formula, pure Python."""
    bpf = (geometry.height * geometry.width + 7) // 8
    idx = i * geometry.width + j
    return (data[k * bpf + idx // 8] >> (idx % 8)) & 1


def random_packed(rng: np.random.Generator, h: int, w: int, t: int, zero_padding: bool = True) -> bytes:
    g = StreamGeometry(h, w, t)
    raw = rng.integers(0, 256, size=(t, g.bytes_per_frame), dtype=np.uint8)
    pad = g.bytes_per_frame * 8 - g.pixels
    if zero_padding and pad and t:
        raw[:, -1] &= (1 << (8 - pad)) - 1
    return raw.tobytes()


def random_stream(rng, h, w, t):
    return from_packed(random_packed(rng, h, w, t), StreamGeometry(h, w, t))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance report -----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(criterion: str, passed: bool, detail: str = "") -> None:
        line = f"{'PASS' if passed else 'FAIL'}  {criterion}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
