"""Benchmark the numba kernels against the pure-numpy reference.

Per-kernel timings use the shapes the default experiment actually runs
(10x10 scene, 332-dim policy input, 4x16 action logits, batch of 32
stored records). The optional end-to-end mode times behavior cloning
plus a short adaptation run in a fresh subprocess per backend, because
the backend is fixed at import time by PDF_BACKEND.

  python benchmarks/bench_backends.py
  python benchmarks/bench_backends.py --repeats 500 --end-to-end
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from pdf.kernels import numpy_impl
from pdf.runner import ExperimentConfig

try:
    from pdf.kernels import numba_impl
except ImportError:
    numba_impl = None


def make_inputs(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    cfg = ExperimentConfig()
    arch = cfg.arch()
    m = cfg.model
    d, k = arch.action_dims, arch.action_tokens
    out = d * k
    batch = cfg.hp.batch_size

    x = rng.normal(0, 1, arch.input_dim).astype(np.float32)
    enc = (rng.normal(0, 0.2, (arch.input_dim, m.enc_hidden)).astype(np.float32),
           rng.normal(0, 0.1, m.enc_hidden).astype(np.float32),
           rng.normal(0, 0.2, (m.enc_hidden, arch.feature_dim)).astype(np.float32),
           rng.normal(0, 0.1, arch.feature_dim).astype(np.float32))
    feat = rng.normal(0, 1, arch.feature_dim).astype(np.float32)
    lm = (rng.normal(0, 0.3, (arch.feature_dim, out)).astype(np.float32),
          rng.normal(0, 0.1, out).astype(np.float32))
    head = (rng.normal(0, 0.3, (arch.feature_dim, m.head_hidden)),
            rng.normal(0, 0.1, m.head_hidden),
            rng.normal(0, 0.3, (m.head_hidden, out)),
            rng.normal(0, 0.1, out))
    z = rng.normal(0, 2, (d, k)).astype(np.float32)
    offs = rng.normal(0, 1, (d, k)).astype(np.float32)
    cands = rng.integers(0, k, (7, d)).astype(np.int64)
    act = rng.integers(0, k, d).astype(np.int64)
    feats = rng.normal(0, 1, (batch, arch.feature_dim)).astype(np.float32)
    bases = rng.normal(0, 2, (batch, d, k)).astype(np.float32)
    acts = rng.integers(0, k, (batch, d)).astype(np.int64)
    img = rng.uniform(0, 1, (arch.h, arch.w, arch.c)).astype(np.float32)
    obj_xy = rng.integers(0, 10, (3, 2)).astype(np.int64)
    colors = rng.uniform(0.2, 1, (3, 3)).astype(np.float32)
    vis = np.ones(3, dtype=np.bool_)

    return {
        "encoder mlp_tanh_tanh": lambda im: im.mlp_tanh_tanh(x, *enc),
        "logits affine": lambda im: im.affine(feat, *lm),
        "head mlp_tanh_linear": lambda im: im.mlp_tanh_linear(feat, *head),
        "add_scaled": lambda im: im.add_scaled(z, offs, 1.0),
        "softmax_rows": lambda im: im.softmax_rows(z),
        "normalized_entropy": lambda im: im.normalized_entropy(z, 1),
        "rows_argmax": lambda im: im.rows_argmax(z),
        "vote_dim_wise": lambda im: im.vote_dim_wise(cands, k),
        "vote_action_wise": lambda im: im.vote_action_wise(cands, k),
        "record_loss_grads": lambda im: im.record_loss_grads(
            feat, z, act, *head, 1.0, 0.5, 0.3, True, 1.0),
        "batch_loss_grads (32)": lambda im: im.batch_loss_grads(
            feats, bases, acts, *head, 1.0, 0.5, 0.3, True, 1.0),
        "render_scene": lambda im: im.render_scene(
            10, 10, 1, np.array([2, 3], dtype=np.int64),
            np.full(3, 0.3, dtype=np.float32), obj_xy, colors, vis,
            np.array([0, 0], dtype=np.int64), np.ones(3, dtype=np.float32)),
        "shift_image": lambda im: im.shift_image(img, 2, -1),
    }


def time_call(fn, impl, repeats):
    fn(impl)  # warm up (numba compiles on first call)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(impl)
    return (time.perf_counter() - t0) / repeats * 1e6


def per_kernel(repeats):
    ops = make_inputs()
    width = max(len(name) for name in ops)
    header = f"{'kernel':<{width}}  {'numpy us':>10}  {'numba us':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, fn in ops.items():
        t_np = time_call(fn, numpy_impl, repeats)
        if numba_impl is None:
            print(f"{name:<{width}}  {t_np:>10.2f}  {'n/a':>10}  {'n/a':>8}")
            continue
        t_nb = time_call(fn, numba_impl, repeats)
        print(f"{name:<{width}}  {t_np:>10.2f}  {t_nb:>10.2f}  "
              f"{t_np / t_nb:>7.1f}x")


END_TO_END = r"""
import json, time
from dataclasses import replace
from pdf.augment import AugmentRanges
from pdf.env import ShiftSpec
from pdf.runner import EnvTemplate, ExperimentConfig, run_variant, train_bc_for
from pdf.types import BaselineSpec, HyperParams
import pdf.kernels as kernels

cfg = ExperimentConfig(
    variant="pdf_full",
    env=EnvTemplate(shift=ShiftSpec("pose_shift", max_cells=2),
                    feedback_mode="shaped"),
    hp=HyperParams(n_max=6, rounding="round", learning_rate=0.05,
                   grad_steps_per_episode=4,
                   baseline=BaselineSpec.parse("fixed:0.0")),
    ranges=AugmentRanges(kinds=("pixel_shift",), shift_px=2),
    u_aggregate="max", episodes=30, eval_rollouts=20,
    seeds=(0, 1), n_tasks=2)

t0 = time.perf_counter()
snap = train_bc_for(cfg)
t1 = time.perf_counter()
rows = run_variant(cfg, snap)
t2 = time.perf_counter()
print(json.dumps({"backend": kernels.NAME, "bc_s": t1 - t0,
                  "run_s": t2 - t1,
                  "success": sum(r.success_rate for r in rows) / len(rows)}))
"""


def end_to_end():
    print("\nend-to-end (fresh subprocess per backend)")
    print("backend   bc train s   adapt+eval s   mean success")
    for backend in ("numpy", "numba"):
        env = dict(os.environ, PDF_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", END_TO_END],
                             capture_output=True, text=True, env=env)
        if out.returncode != 0:
            print(f"{backend:<8}  failed:\n{out.stderr}")
            continue
        r = json.loads(out.stdout.strip().splitlines()[-1])
        print(f"{r['backend']:<8}  {r['bc_s']:>10.2f}   {r['run_s']:>12.2f}"
              f"   {r['success']:>12.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=2000,
                    help="timed calls per kernel (default 2000)")
    ap.add_argument("--end-to-end", action="store_true",
                    help="also time bc training plus a short adaptation run "
                         "under each backend")
    args = ap.parse_args()
    if numba_impl is None:
        print("numba backend unavailable; timing numpy only\n")
    per_kernel(args.repeats)
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
