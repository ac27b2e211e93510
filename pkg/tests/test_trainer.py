import warnings

import numpy as np
import pytest

from trajrestore.harness.synth import make_clean_image
from trajrestore.model import ModelConfig
from trajrestore.degrade import apply_recipe, sample_recipe
from trajrestore.trainer import (
    TrainingError, TrainRunConfig, apply_corrector, build_schedule, prepare_pair, read_trace, train_drift_corrector,
    train_run, write_trace,
)

SMALL = ModelConfig(embed_dim=16, layers=1, heads=2, condition_dropout_prob=0.0)


def pairs(n, size=16, seed=0):
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        hq = make_clean_image(rng, size, size)
        out.append((apply_recipe(hq, sample_recipe("B+N", rng)), hq))
    return out


def cfg(**kw):
    base = dict(schedule=build_schedule([8, 16], 2), frame_interval=2, steps_per_epoch=4, batch_size=2, lr=3e-3,
                warmup_steps=2, model=SMALL, seed=1)
    base.update(kw)
    return TrainRunConfig(**base)


def test_schedule_examples():
    assert build_schedule([512, 720, 960], 300).stages == ((512, 100), (720, 100), (960, 100))
    assert [e for _, e in build_schedule([16, 24, 32], 10).stages] == [4, 3, 3]
    assert build_schedule([32], 5).stages == ((32, 5),)
    s = build_schedule([16, 24, 32], 11)
    assert s.total_epochs == 11 and s.resolutions == [16, 24, 32]


def test_schedule_rejects_non_increasing():
    with pytest.raises(ValueError):
        build_schedule([24, 16], 4)
    with pytest.raises(ValueError):
        build_schedule([16, 16], 4)
    assert build_schedule([24, 16], 4, allow_decreasing=True).resolutions == [24, 16]
    with pytest.raises(ValueError):
        build_schedule([16, 24, 32], 2)


def test_prepare_pair_shares_window():
    a = np.random.default_rng(0).random((20, 24, 3))
    x, y = prepare_pair(a, a.copy(), 16, "crop", 16, np.random.default_rng(1))
    assert x.shape == (16, 16, 3) and np.array_equal(x, y)
    x, y = prepare_pair(a, a.copy(), 10, "downup", 16, np.random.default_rng(1))
    assert x.shape == (16, 16, 3) and np.array_equal(x, y)


def test_train_errors():
    with pytest.raises(TrainingError):
        train_run(cfg(), [])
    with pytest.raises(TrainingError):
        train_run(cfg(schedule=build_schedule([32], 1)), pairs(1))
    bad = pairs(1)
    bad[0] = (np.full_like(bad[0][0], np.nan), bad[0][1])
    with pytest.raises(TrainingError, match="non-finite"), np.errstate(invalid="ignore"):
        train_run(cfg(), bad)


def test_trace_and_stages():
    res = train_run(cfg(), pairs(3))
    assert len(res.trace) == 8
    assert [r.resolution for r in res.trace] == [8] * 4 + [16] * 4
    assert [r.step for r in res.trace] == list(range(8))
    assert res.trace[0].lr == 0.0 and res.trace[2].lr == pytest.approx(3e-3)
    assert res.optimizer.step_count == 8


def test_train_deterministic_and_thread_invariant():
    data = pairs(4)
    a = train_run(cfg(), data)
    b = train_run(cfg(), data)
    c = train_run(cfg(threads=3), data)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
        assert np.array_equal(a.params[k].data, c.params[k].data)
    assert [r.loss for r in a.trace] == [r.loss for r in c.trace]


def test_f64_precision():
    res = train_run(cfg(precision="f64"), pairs(2))
    assert res.params["out.w"].data.dtype == np.float64


def test_trace_roundtrip(tmp_path):
    res = train_run(cfg(), pairs(2))
    p = str(tmp_path / "trace.csv")
    write_trace(res.trace, p)
    back = read_trace(p)
    assert [(r.step, r.stage, r.resolution) for r in back] == [(r.step, r.stage, r.resolution) for r in res.trace]
    assert np.allclose([r.loss for r in back], [r.loss for r in res.trace], rtol=1e-8)


def test_loss_trend_decreases():
    # 50-step windows, majority over 3 seeds
    data = pairs(12)
    wins = 0
    for seed in range(3):
        res = train_run(cfg(schedule=build_schedule([16], 1), steps_per_epoch=150, seed=seed, warmup_steps=10), data)
        losses = np.array([r.loss for r in res.trace])
        wins += losses[:50].mean() > losses[-50:].mean()
    assert wins >= 2


def test_corrector_degenerate_is_near_identity():
    data = pairs(3, size=8)
    hq = [h for _, h in data]
    ccfg = cfg(schedule=build_schedule([8], 1), steps_per_epoch=400, batch_size=2, lr=1e-2, warmup_steps=10,
               weight_decay=0.0, model=ModelConfig(embed_dim=32, layers=2, heads=2, condition_dropout_prob=0.0))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        corr = train_drift_corrector(None, ccfg, [(h, h) for h in hq], base_outputs=hq, K=4)
    assert any("identity" in str(w.message) for w in caught)
    out = apply_corrector(corr, np.stack(hq))
    assert np.abs(out - np.stack(hq)).mean() < 1e-2


def test_corrector_needs_base():
    with pytest.raises(TrainingError):
        train_drift_corrector(None, cfg(), pairs(1))


def test_corrector_deterministic():
    data = pairs(3)
    base = train_run(cfg(), data)
    a = train_drift_corrector(base, cfg(), data)
    b = train_drift_corrector(base, cfg(), data)
    assert a.model_config.frame_count == 5
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
