"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria (4, 5, 6) train real models and take minutes each.
"""
import math
import os
import time

import numpy as np
import pytest

from trajrestore import numerics as nx
from trajrestore.degrade import CATEGORIES
from trajrestore.harness.experiment import run_experiment
from trajrestore.harness.report import emit_report
from trajrestore.metrics import CategoryScore, EvalReport, SsimParams, psnr, ssim
from trajrestore.model import ModelConfig, init_model, training_loss
from trajrestore.numerics import Tensor
from trajrestore.sampler import SamplerConfig, cfg_combine, sample_batch, shift_timesteps
from trajrestore.sequence import build_pseudo_clip

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, "..", "configs")


@pytest.fixture
def verdict(request):
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n, name, ok, detail):
        line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        request.config.acceptance_lines.append(line)
        if tr is not None:
            tr.ensure_newline()
            tr.write_line(line)
        assert ok, line
    return emit


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    # toy_default, curriculum and corrector share one synthetic dataset
    return str(tmp_path_factory.mktemp("data"))


# ------------------------------------------------------------ 1. metrics

def _direct_ssim(a, b, p=SsimParams()):
    from numpy.lib.stride_tricks import sliding_window_view

    a = np.floor(np.clip(a, 0, 1) * 255 + 0.5)
    b = np.floor(np.clip(b, 0, 1) * 255 + 0.5)
    w = p.kernel_2d()
    vals = []
    for c in range(a.shape[2]):
        wa, wb = sliding_window_view(a[..., c], w.shape), sliding_window_view(b[..., c], w.shape)
        mu_a, mu_b = np.einsum("ijkl,kl->ij", wa, w), np.einsum("ijkl,kl->ij", wb, w)
        da, db = wa - mu_a[..., None, None], wb - mu_b[..., None, None]
        va, vb = np.einsum("ijkl,kl->ij", da * da, w), np.einsum("ijkl,kl->ij", db * db, w)
        cov = np.einsum("ijkl,kl->ij", da * db, w)
        s = ((2 * mu_a * mu_b + p.c1) * (2 * cov + p.c2)) / ((mu_a ** 2 + mu_b ** 2 + p.c1) * (va + vb + p.c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def _direct_psnr(a, b):
    a = np.floor(np.clip(a, 0, 1) * 255 + 0.5)
    b = np.floor(np.clip(b, 0, 1) * 255 + 0.5)
    mse = np.mean((a - b) ** 2)
    return 100.0 if mse == 0 else 10 * math.log10(255 ** 2 / mse)


def test_criterion_1_metric_oracle(verdict):
    t0 = time.perf_counter()
    g = lambda v: np.full((16, 16, 3), v / 255.0)  # noqa: E731
    c1 = (0.01 * 255) ** 2
    closed = [
        abs(psnr(g(9), g(9)) - 100.0),
        abs(psnr(g(0), g(255)) - 0.0),
        abs(psnr(g(100), g(101)) - 10 * math.log10(255 ** 2)),
        abs(ssim(g(9), g(9)) - 1.0),
        abs(ssim(g(100), g(150)) - (2 * 100 * 150 + c1) / (100 ** 2 + 150 ** 2 + c1)),
    ]
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        a = rng.random((64, 64, 3))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), a.shape), 0, 1)
        worst = max(worst, abs(ssim(a, b) - _direct_ssim(a, b)), abs(psnr(a, b) - _direct_psnr(a, b)))
    dt = time.perf_counter() - t0
    ok = max(closed) < 1e-6 and worst < 1e-6 and dt < 10
    verdict(1, "metric oracle", ok, f"closed-form err {max(closed):.1e}, oracle err {worst:.1e}, {dt:.1f}s")


# ---------------------------------------------------------- 2. gradients

def _primitive_cases(rng):
    def leaf(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    def wsum(t):
        # fixed random weights per shape so no reduction is constant
        w = np.random.default_rng(list(t.shape)).normal(size=t.shape)
        return nx.sum(nx.mul(t, Tensor(w)))

    return {
        "matmul": (lambda ts: wsum(nx.matmul(ts[0], ts[1])), [leaf(3, 4), leaf(4, 2)]),
        "add": (lambda ts: wsum(nx.add(ts[0], ts[1])), [leaf(3, 4), leaf(3, 4)]),
        "sub": (lambda ts: wsum(nx.sub(ts[0], ts[1])), [leaf(3, 4), leaf(3, 4)]),
        "mul": (lambda ts: wsum(nx.mul(ts[0], ts[1])), [leaf(3, 4), leaf(3, 4)]),
        "scale": (lambda ts: wsum(nx.scale(ts[0], 0.7)), [leaf(3, 4)]),
        "broadcast_add": (lambda ts: wsum(nx.broadcast_add(ts[0], ts[1])), [leaf(2, 3, 4), leaf(4)]),
        "reshape": (lambda ts: wsum(nx.reshape(ts[0], (4, 3))), [leaf(3, 4)]),
        "transpose": (lambda ts: wsum(nx.transpose(ts[0], (2, 0, 1))), [leaf(2, 3, 4)]),
        "concat": (lambda ts: wsum(nx.concat([ts[0], ts[1]], axis=1)), [leaf(2, 3), leaf(2, 2)]),
        "sum": (lambda ts: nx.sum(nx.mul(nx.sum(ts[0], axes=1), nx.sum(ts[0], axes=1))), [leaf(3, 4)]),
        "mean": (lambda ts: wsum(nx.mean(ts[0], axes=0)), [leaf(3, 4)]),
        "softmax": (lambda ts: wsum(nx.softmax(ts[0])), [leaf(3, 5)]),
        "layer_norm": (lambda ts: wsum(nx.layer_norm(ts[0])), [leaf(3, 6)]),
        "gelu": (lambda ts: wsum(nx.gelu(ts[0])), [leaf(3, 4)]),
        "mse": (lambda ts: nx.mse(ts[0], ts[1]), [leaf(3, 4), leaf(3, 4)]),
    }


def test_criterion_2_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    cases = _primitive_cases(rng)
    assert set(cases) == set(nx.PRIMITIVES)
    errs = {name: nx.finite_diff_check(f, pts) for name, (f, pts) in cases.items()}
    base = ModelConfig(patch_size=4, embed_dim=8, layers=1, heads=2, frame_count=2, image_size=8,
                       condition_dropout_prob=0.0)
    for mode in ("regress", "flow"):
        cfg = base.replace(mode=mode)
        prng = np.random.default_rng(11)
        params = {k: Tensor(prng.normal(0, 0.3, v.shape), requires_grad=True)
                  for k, v in init_model(cfg, 0, np.float64).items()}
        names = list(params)
        clip = prng.random((2, 2, 8, 8, 3))

        def loss(ts, cfg=cfg, names=names, clip=clip):
            return training_loss(dict(zip(names, ts)), cfg, clip, np.random.default_rng(5))

        errs[f"model[{mode}]"] = nx.finite_diff_check(loss, [params[k] for k in names])
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and dt < 120
    verdict(2, "gradient correctness", ok, f"max rel err {errs[worst]:.1e} ({worst}), {dt:.1f}s")


# ----------------------------------------------------------- 3. sequence

def test_criterion_3_sequence_invariants(verdict):
    rng = np.random.default_rng(3)
    failures = 0
    for i in range(1000):
        h, w = rng.integers(1, 9, size=2)
        lq, hq = rng.random((h, w, 3)), rng.random((h, w, 3))
        if i % 10 == 0:
            hq = lq.copy()
        lo, hi = np.minimum(lq, hq), np.maximum(lq, hq)
        for T in (4, 8, 16, 32, 60):
            clip = build_pseudo_clip(lq, hq, T)
            a = np.asarray(clip.alphas)
            good = (np.array_equal(clip.frames[0], lq) and np.array_equal(clip.frames[-1], hq)
                    and a[0] == 0 and a[-1] == 1 and np.all(np.diff(a) > 0) and len(clip.frames) == T + 1
                    and all(np.all(f >= lo) and np.all(f <= hi) for f in clip.frames))
            failures += not good
    verdict(3, "sequence invariants", failures == 0, f"{failures} violations over 5000 clips")


# ------------------------------------------------------- 4. end to end

def test_criterion_4_restoration_gain(verdict, data_root, tmp_path):
    t0 = time.perf_counter()
    run, = run_experiment(os.path.join(CONFIGS, "toy_default.cfg"), str(tmp_path / "toy"), data_root=data_root)
    dt = time.perf_counter() - t0
    ok = run.gain >= 2.0 and dt < 30 * 60
    verdict(4, "restoration gain", ok, f"{run.lq_psnr:.2f} -> {run.psnr:.2f} dB (gain {run.gain:+.2f}), {dt / 60:.1f} min")


# ---------------------------------------------------------- 5. curriculum

def test_criterion_5_curriculum_trend(verdict, data_root, tmp_path):
    runs = run_experiment(os.path.join(CONFIGS, "curriculum.cfg"), str(tmp_path / "cur"), data_root=data_root)
    by = {}
    for r in runs:
        by.setdefault(str(r.variant["resolutions"]).replace(" ", ""), []).append(r.psnr)
    assert all(len(v) == 3 for v in by.values())
    m = {k: float(np.mean(v)) for k, v in by.items()}
    ok = m["16,24,32"] >= m["16"] and m["24,16"] <= m["16,24"]
    detail = ", ".join(f"[{k}] {v:.3f}" for k, v in m.items())
    verdict(5, "curriculum trend", ok, detail)


# ----------------------------------------------------------- 6. corrector

def test_criterion_6_drift_correction(verdict, data_root, tmp_path):
    runs = run_experiment(os.path.join(CONFIGS, "corrector.cfg"), str(tmp_path / "corr"), data_root=data_root)
    base = float(np.mean([r.base_psnr for r in runs]))
    corrected = float(np.mean([r.psnr for r in runs]))
    delta = corrected - base
    verdict(6, "drift correction", delta >= 0.3,
            f"base {base:.3f} -> corrected {corrected:.3f} dB ({delta:+.3f}) over {len(runs)} seeds")


# --------------------------------------------------------- 7. determinism

def _artifacts(d):
    names = ("base.vbck", "corrector.vbck", "report.csv", "report.md", "base_report.csv", "trace.csv",
             "corrector_trace.csv", "plot_data.csv")
    out = {}
    for n in names:
        with open(os.path.join(d, n), "rb") as fh:
            out[n] = fh.read()
    for root, _, files in os.walk(os.path.join(d, "pred")):
        for f in files:
            with open(os.path.join(root, f), "rb") as fh:
                out[os.path.relpath(os.path.join(root, f), d)] = fh.read()
    return out


def test_criterion_7_determinism(verdict, tmp_path):
    cfg = os.path.join(CONFIGS, "smoke.cfg")
    run_experiment(cfg, str(tmp_path / "a"), overrides={"threads": 1}, data_root=str(tmp_path / "da"))
    run_experiment(cfg, str(tmp_path / "b"), overrides={"threads": 1}, data_root=str(tmp_path / "db"))
    run_experiment(cfg, str(tmp_path / "c"), overrides={"threads": 4}, data_root=str(tmp_path / "dc"))
    a, b, c = (_artifacts(str(tmp_path / x)) for x in "abc")
    diff = [k for k in a if a[k] != b.get(k) or a[k] != c.get(k)]
    ok = not diff and set(a) == set(b) == set(c)
    verdict(7, "determinism", ok, f"{len(a)} artifacts compared across 3 runs (threads 1, 1, 4); differing: {diff or 'none'}")


# ------------------------------------------------------------- 8. report

def test_criterion_8_report_fidelity(verdict, tmp_path):
    cats = {c: CategoryScore(10 + i, 20.0 + 0.345 * i + 0.005, 0.6 + 0.01337 * i) for i, c in enumerate(CATEGORIES)}
    p = str(tmp_path / "r.md")
    emit_report(EvalReport(cats), "markdown", p)
    with open(p, "rb") as fh:
        got = fh.read()
    with open(os.path.join(HERE, "fixtures", "report_golden.md"), "rb") as fh:
        want = fh.read()
    lines = got.decode().splitlines()
    header = [h.strip() for h in lines[0].strip().strip("|").split("|")]
    psnr_cells = [c.strip() for c in lines[2].strip().strip("|").split("|")][1:]
    ssim_cells = [c.strip() for c in lines[3].strip().strip("|").split("|")][1:]
    ok = (got == want and header == ["Metric"] + list(CATEGORIES) + ["Average"] and len(CATEGORIES) == 20
          and all(len(c.split(".")[1]) == 2 for c in psnr_cells) and all(len(c.split(".")[1]) == 4 for c in ssim_cells))
    verdict(8, "report fidelity", ok, f"{len(header) - 1} columns, byte-equal to golden: {got == want}")


# ------------------------------------------------------------ 9. sampler

def test_criterion_9_sampler_contracts(verdict):
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(10_000):
        s = float(np.exp(rng.uniform(np.log(0.05), np.log(50.0))))
        ts = np.concatenate([[0.0], np.sort(rng.random(rng.integers(0, 40))), [1.0]])
        out = shift_timesteps(ts, s)
        bad += not (out[0] == 0.0 and out[-1] == 1.0 and np.all(np.diff(out) >= 0)
                    and np.all(np.diff(out)[np.diff(ts) > 0] > 0))
    u, c = rng.normal(size=(2, 3, 4, 4, 3)), rng.normal(size=(2, 3, 4, 4, 3))
    cfg_ok = np.array_equal(cfg_combine(u, c, 1.0), c) and np.array_equal(cfg_combine(u, c, 0.0), u)

    flow = ModelConfig(patch_size=4, embed_dim=16, layers=1, heads=2, frame_count=3, image_size=8, mode="flow")
    anchors = rng.random((2, 8, 8, 3))
    target = rng.random((2, 3, 8, 8, 3))

    def err(steps):
        out = sample_batch(None, flow, anchors, SamplerConfig(steps=steps, mode="flow"), np.random.default_rng(1),
                           velocity_fn=lambda a, x, tau: 8.0 * (target - x))
        return float(np.abs(out - target).mean())

    e5, e50 = err(5), err(50)
    ok = bad == 0 and cfg_ok and e50 < e5
    verdict(9, "sampler contracts", ok, f"{bad} bad grids of 10000, cfg identities {cfg_ok}, error 5 steps {e5:.2e} > 50 steps {e50:.2e}")
