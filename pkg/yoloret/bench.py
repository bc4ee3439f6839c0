"""Batch-1 latency benchmark on synthetic inputs

Timing is wall-clock per forward pass with a monotonic clock. Warmup
iterations run first and are not recorded. Runs are strictly serial.
"""
import time
from collections import OrderedDict

import numpy as np
from tqdm import tqdm

from .flops import UNIT
from .log import get_log, log_runtime
from .model import synthetic_input

logger = get_log()


def summarize_latencies(durations_ms):
    """mean, median and 95th percentile in ms plus fps = 1000 / mean"""
    ms = np.asarray(durations_ms, dtype=np.float64)
    if ms.size == 0:
        raise ValueError("no durations to summarize")
    mean = float(ms.mean())
    return OrderedDict(
        [
            ("mean_ms", mean),
            ("median_ms", float(np.median(ms))),
            ("p95_ms", float(np.percentile(ms, 95))),
            ("fps", 1000.0 / mean if mean > 0 else float("inf")),
        ]
    )


def time_forward(fn, image, warmup, iters, progress=False):
    """Milliseconds per call of fn(image), warmup calls excluded"""
    for _ in range(warmup):
        fn(image)
    durations = []
    for _ in tqdm(range(iters), disable=not progress, desc="bench"):
        t0 = time.perf_counter()
        fn(image)
        durations.append((time.perf_counter() - t0) * 1000.0)
    return durations


@log_runtime
def benchmark_run(model, resolution=None, warmup=5, iters=20, seed=0, include_postprocess=False, progress=False):
    """Latency statistics and static cost of `model`

    Args:
        model (YoloReT)
        resolution (int): square input side; defaults to the model's
        warmup (int): untimed iterations
        iters (int): timed iterations, >= 1
        seed (int): seed of the synthetic input
        include_postprocess (bool): time decode + NMS too

    Returns:
        OrderedDict: JSON-ready report
    """
    if iters < 1:
        raise ValueError("iters must be >= 1, got %s" % iters)
    if warmup < 0:
        raise ValueError("warmup must be >= 0, got %s" % warmup)
    res = model.cfg.input_resolution if resolution is None else resolution
    image = synthetic_input(res, seed=seed, batch=1)
    fn = model.detect_tensor if include_postprocess else model
    durations = time_forward(fn, image, warmup, iters, progress=progress)

    report = OrderedDict()
    report["resolution"] = res
    report["batch_size"] = 1
    report["warmup"] = warmup
    report["iters"] = iters
    report["include_postprocess"] = include_postprocess
    report.update(summarize_latencies(durations))
    report["macs"] = model.macs(res)
    report["flops_unit"] = UNIT
    report["params"] = model.count_params()
    report["weight_bytes"] = model.weight_bytes()
    report["weight_precision"] = "float32"
    logger.info("%s px: median %.2f ms, %.1f fps", res, report["median_ms"], report["fps"])
    return report
