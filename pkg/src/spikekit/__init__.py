"""Spike-camera stream engine.

Packed spike streams, the ``.dat``/``.info`` codec, an integrate-and-fire
sensor simulator, statistics-based reconstruction, quality metrics, dataset
scanning and a threaded real-time acquisition pipeline.
"""

__version__ = "0.1.0"

from .codec import StreamMeta, read_dat, read_meta, write_dat, write_meta
from .metrics import mse, psnr, quality, ssim
from .reconstruction import ReconImage, brighten, sliding_tfp, tfi, tfp
from .simulator import PixelState, SensorConfig, firing_rate, simulate, step
from .stream import (
    SpikeStream,
    StreamGeometry,
    from_dense,
    from_packed,
    get_block,
    spike_count_map,
    to_dense,
)

__all__ = [
    "__version__",
    "StreamGeometry",
    "SpikeStream",
    "from_packed",
    "from_dense",
    "get_block",
    "to_dense",
    "spike_count_map",
    "StreamMeta",
    "read_dat",
    "write_dat",
    "read_meta",
    "write_meta",
    "SensorConfig",
    "PixelState",
    "step",
    "simulate",
    "firing_rate",
    "ReconImage",
    "tfp",
    "tfi",
    "brighten",
    "sliding_tfp",
    "mse",
    "psnr",
    "ssim",
    "quality",
]
