"""Latency benchmark for the reconstruction module and its scan kernels."""

from __future__ import annotations

import time

import numpy as np

from . import scan
from .backbone import FeatureStack
from .config import RunConfig
from .recon import FeatureReconstructor
from .tensor import Tensor
from .utils import derive_seed, rng_from


def bench_recon(cfg: RunConfig, repeats: int = 5) -> dict:
    """Per-image wall-clock of one reconstruction forward, per scan backend."""
    c_feat = cfg.backbone.embed_channels
    rec = FeatureReconstructor(
        cfg.recon, c_feat=c_feat, grid=cfg.grid_size,
        seed=derive_seed(cfg.seed, "bench"), dtype=cfg.dtype,
    )
    f = Tensor(rng_from(cfg.seed, "bench-input").normal(size=(c_feat, cfg.grid_size, cfg.grid_size)).astype(cfg.dtype))
    stack = FeatureStack(f, "f_input")

    results = {}
    prev = scan.get_backend()
    try:
        for backend in scan.available_backends():
            scan.set_backend(backend)
            rec.forward(stack)  # warm up caches
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                rec.forward(stack)
                times.append(time.perf_counter() - t0)
            results[backend] = {
                "median_s": float(np.median(times)),
                "best_s": float(min(times)),
            }
    finally:
        scan.set_backend(prev)
    return results


def bench_scan_kernels(cfg: RunConfig, repeats: int = 20) -> dict:
    """Raw kernel timings (forward + backward) on the configured token shape."""
    t_len = (cfg.grid_size // cfg.recon.patch_size) ** 2
    d_inner = cfg.recon.inner_dim
    n = cfg.recon.state_dim
    rng = rng_from(cfg.seed, "bench-scan")
    dt = cfg.dtype
    u = rng.normal(size=(cfg.batch_size, t_len, d_inner)).astype(dt)
    delta = np.abs(rng.normal(size=u.shape)).astype(dt) + dt(0.05)
    a = (-np.abs(rng.normal(size=(d_inner, n))) - 0.1).astype(dt)
    bm = rng.normal(size=(cfg.batch_size, t_len, n)).astype(dt)
    cm = rng.normal(size=bm.shape).astype(dt)
    dskip = rng.normal(size=d_inner).astype(dt)

    results = {}
    for backend in scan.available_backends():
        kern = scan._BACKENDS[backend]
        y, hall = kern.scan_forward(u, delta, a, bm, cm, dskip)
        gy = np.ones_like(y)
        fwd, bwd = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            kern.scan_forward(u, delta, a, bm, cm, dskip)
            fwd.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            kern.scan_backward(gy, u, delta, a, bm, cm, dskip, hall)
            bwd.append(time.perf_counter() - t0)
        results[backend] = {
            "forward_s": float(np.median(fwd)),
            "backward_s": float(np.median(bwd)),
        }
    return results


def format_bench(recon_results: dict, kernel_results: dict, cfg: RunConfig) -> str:
    lines = [
        f"reconstruction module latency (arch={cfg.recon.arch}, grid={cfg.grid_size}, "
        f"D={cfg.recon.embed_dim}, L={cfg.recon.depth}, {cfg.precision})",
    ]
    for backend, r in recon_results.items():
        lines.append(f"  {backend:>9}: {r['median_s'] * 1e3:8.2f} ms/image (best {r['best_s'] * 1e3:.2f})")
    lines.append("raw scan kernel (batch x tokens x inner):")
    for backend, r in kernel_results.items():
        lines.append(
            f"  {backend:>9}: forward {r['forward_s'] * 1e3:8.3f} ms, backward {r['backward_s'] * 1e3:8.3f} ms"
        )
    if len(recon_results) == 2:
        a, b = recon_results["numpy"]["median_s"], recon_results["compiled"]["median_s"]
        lines.append(f"compiled speedup over numpy (module forward): {a / b:.2f}x")
    return "\n".join(lines)
