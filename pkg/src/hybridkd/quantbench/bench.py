"""Single-image latency and memory benchmark."""

from __future__ import annotations

import csv
import io
import json
import time
import tracemalloc
from dataclasses import asdict, dataclass, field
from typing import List, Sequence

import numpy as np

from ..core import Tensor, no_grad
from ..errors import ConfigError
from ..models import describe
from .checkpoint import checkpoint_bytes
from .flops import count_params_flops
from .quantize import QuantModel

BENCH_FIELDS = ["model", "params_m", "flops_g", "size_mb", "lat_ms_mean", "lat_ms_std", "mem_mb"]
MIN_RUNS = 30
MIN_WARMUP = 5


@dataclass
class BenchReport:
    model: str
    params_m: float
    flops_g: float
    size_mb: float
    lat_ms_mean: float
    lat_ms_std: float
    mem_mb: float
    samples_ms: List[float] = field(default_factory=list, repr=False)
    warmup: int = MIN_WARMUP

    def row(self) -> dict:
        return {k: getattr(self, k) for k in BENCH_FIELDS}

    def to_dict(self) -> dict:
        return asdict(self)


def benchmark(model, input_size: int, runs: int = MIN_RUNS, warmup: int = MIN_WARMUP, name: str = None,
              seed: int = 0) -> BenchReport:
    """Time ``runs`` single-image forwards after ``warmup`` untimed ones.

    Memory is the peak traced allocation above the level at the start of the
    timed loop, in MB.
    """
    if runs < MIN_RUNS:
        raise ConfigError(f"runs must be >= {MIN_RUNS}, got {runs}")
    if warmup < MIN_WARMUP:
        raise ConfigError(f"warmup must be >= {MIN_WARMUP}, got {warmup}")
    descriptor = model.descriptor if isinstance(model, QuantModel) else describe(model)
    params, flops = count_params_flops(descriptor)
    size = len(checkpoint_bytes(model))
    x = Tensor(np.random.default_rng(seed).random((1, 3, input_size, input_size), dtype=np.float32))
    with no_grad():
        for _ in range(warmup):
            model(x)
        samples = []
        tracemalloc.start()
        base, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        try:
            for _ in range(runs):
                t0 = time.perf_counter()
                model(x)
                samples.append((time.perf_counter() - t0) * 1e3)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
    lat = np.asarray(samples)
    label = name or (f"{descriptor['arch']}-int8" if isinstance(model, QuantModel) else descriptor["arch"])
    return BenchReport(
        model=label,
        params_m=params / 1e6,
        flops_g=flops / 1e9,
        size_mb=size / 1e6,
        lat_ms_mean=float(lat.mean()),
        lat_ms_std=float(lat.std(ddof=1)),
        mem_mb=max(peak - base, 0) / 1e6,
        samples_ms=samples,
        warmup=warmup,
    )


def bench_csv(reports: Sequence[BenchReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in reports:
        w.writerow([r.model, f"{r.params_m:.6f}", f"{r.flops_g:.6f}", f"{r.size_mb:.6f}",
                    f"{r.lat_ms_mean:.4f}", f"{r.lat_ms_std:.4f}", f"{r.mem_mb:.4f}"])
    return buf.getvalue()


MEMORY_NOTE = "mem_mb is the peak traced allocation above the pre-run level during the timed forwards"


def bench_json(reports: Sequence[BenchReport]) -> str:
    return json.dumps({"memory": MEMORY_NOTE, "reports": [r.row() for r in reports]}, indent=2) + "\n"
