import json
import logging
import math

import numpy as np
import pytest

from srtool.metrics import bicubic_resize
from srtool.model import ModelConfig, build_model, forward, identity_model
from srtool.tensor import ShapeError, mse
from srtool.training import (Adam, EpochRecord, GradientDescent, NonFiniteError, TrainConfig,
                             batch_loss, checkpoint, degrade, loss_and_grads, make_pairs, resume,
                             sidecar_path, train)

SMALL = ModelConfig(feature_width=4, expansion_width=6, n_residual_blocks=1, kernel_size=3, tile_size=9)


def small(seed=0, **kw):
    cfg = ModelConfig(**{**SMALL.to_dict(), "seed": seed, **kw})
    return build_model(cfg)


def tiles(n, t=9, seed=0):
    r = np.random.default_rng(seed)
    y = r.random((n, 3, t, t)).astype(np.float32)
    x = np.clip(y + r.normal(0, 0.05, y.shape), 0, 1).astype(np.float32)
    return x, y


# -- loss ---------------------------------------------------------------------

def test_perfect_model_loss_zero(rng):
    x = rng.random((2, 3, 9, 9)).astype(np.float32)
    assert batch_loss(identity_model(SMALL), x, x) == 0.0


def test_all_ones_residual_gives_half_count(rng):
    x = rng.random((1, 3, 9, 9)).astype(np.float32)
    assert batch_loss(identity_model(SMALL), x, x + 1) == pytest.approx(3 * 81 / 2, rel=1e-6)


def test_loss_proportional_to_mse():
    x, y = tiles(5)
    model = small().astype(np.float64)
    out = forward(model, x.astype(np.float64))
    per_pair = [mse(y[i], out[i]) for i in range(5)]
    expect = (3 * 81 / 2) * np.mean(per_pair)
    assert abs(batch_loss(model, x.astype(np.float64), y) - expect) < 1e-10 * max(1, expect)


def test_mismatched_pairs_rejected():
    with pytest.raises(ShapeError):
        batch_loss(small(), np.zeros((2, 3, 9, 9), np.float32), np.zeros((2, 3, 9, 10), np.float32))


def test_loss_and_grads_agree_with_batch_loss():
    x, y = tiles(3)
    model = small()
    loss, grads, _ = loss_and_grads(model, x, y)
    assert loss == pytest.approx(batch_loss(model, x, y), rel=1e-5)
    assert set(grads) == {name for name, _, _ in model.parameters()}


def test_loss_gradient_directional_derivative():
    x, y = (a.astype(np.float64) for a in tiles(2))
    model = small(zero_init_residual=False).astype(np.float64)
    _, grads, _ = loss_and_grads(model, x, y)
    r = np.random.default_rng(3)
    dirs = {n: (r.normal(size=w.shape), r.normal(size=b.shape)) for n, w, b in model.parameters()}
    norm = math.sqrt(sum(np.sum(a * a) + np.sum(b * b) for a, b in dirs.values()))
    analytic = sum(np.sum(grads[n][0] * a) + np.sum(grads[n][1] * b) for n, (a, b) in dirs.items()) / norm

    def shifted(h):
        m = model.copy()
        for n, w, b in m.parameters():
            w += h * dirs[n][0] / norm
            b += h * dirs[n][1] / norm
        return batch_loss(m, x, y)

    h = 1e-6
    numeric = (shifted(h) - shifted(-h)) / (2 * h)
    assert abs(numeric - analytic) <= 1e-6 * max(1.0, abs(analytic))


# -- optimizers -----------------------------------------------------------------

def _grads_like(model, value):
    return {n: (np.full_like(w, value), np.full_like(b, value)) for n, w, b in model.parameters()}


def test_adam_zero_grad_no_change():
    model = small()
    before = model.copy()
    Adam(1e-3).step(model, _grads_like(model, 0.0))
    for (_, w0, b0), (_, w1, b1) in zip(before.parameters(), model.parameters()):
        assert np.array_equal(w0, w1) and np.array_equal(b0, b1)


def test_adam_first_step_moves_by_lr():
    model = small().astype(np.float64)
    before = model.copy()
    Adam(1e-3).step(model, _grads_like(model, 2.5))
    for (_, w0, _), (_, w1, _) in zip(before.parameters(), model.parameters()):
        # bias-corrected first step is lr * g / (|g| + eps)
        assert np.allclose(w0 - w1, 1e-3 * 2.5 / (2.5 + 1e-8), rtol=1e-12, atol=0)


def test_gd_single_step():
    model = small().astype(np.float64)
    before = model.copy()
    GradientDescent(0.1).step(model, _grads_like(model, 0.5))
    for (_, w0, b0), (_, w1, b1) in zip(before.parameters(), model.parameters()):
        assert np.allclose(w1, w0 - 0.05, atol=1e-15) and np.allclose(b1, b0 - 0.05, atol=1e-15)


def test_gd_quadratic_converges():
    # f(w) = (w - 3)^2 / 2, w_k = 3 - 3 * 0.9^k
    model = small().astype(np.float64)
    for _, w, b in model.parameters():
        w[...] = 0
        b[...] = 0
    opt = GradientDescent(0.1)
    for _ in range(100):
        opt.step(model, {n: (w - 3, b - 3) for n, w, b in model.parameters()})
    w = model["conv0"].kernel.weights
    assert np.all(np.abs(w - 3) < 1e-3)
    assert np.allclose(w, 3 - 3 * 0.9 ** 100, rtol=1e-12)


def test_nonfinite_gradient_rejected():
    model = small()
    g = _grads_like(model, 0.0)
    g["conv_out"][0][0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError, match="conv_out"):
        Adam().step(model, g)


# -- config & data ------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(batch_size=0), dict(scale=5),
                                dict(schedule="x"), dict(optimizer="rmsprop"),
                                dict(max_epochs=None)])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_degrade_same_extent_and_lossy(rng):
    hr = rng.random((3, 33, 33))
    lr = degrade(hr, 3)
    assert lr.shape == hr.shape and np.max(np.abs(lr - hr)) > 0.05
    assert np.array_equal(lr, np.clip(bicubic_resize(bicubic_resize(hr, 1 / 3), 3, out_shape=(33, 33)), 0, 1))


def test_make_pairs_counts(rng, caplog):
    imgs = [rng.random((3, 40, 40)), rng.random((3, 5, 5)), rng.random((3, 18, 27))]
    with caplog.at_level(logging.WARNING):
        x, y = make_pairs(imgs, tile=9, scale=3)
    assert len(x) == 25 + 6 and x.shape == y.shape and x.dtype == np.float32
    assert "smaller than tile" in caplog.text
    with pytest.raises(ValueError):
        make_pairs([rng.random((3, 5, 5))], tile=9)


# -- loop -------------------------------------------------------------------------

def test_sequential_epoch_has_all_batches():
    x, y = tiles(144)
    cfg = TrainConfig(max_epochs=1, schedule="sequential", learning_rate=1e-3)
    _, recs = train((x, y), cfg, model_config=SMALL)
    assert recs[0].batches == 18 and recs[0].samples == 144 and recs[0].complete


def test_random_epoch_bounded():
    x, y = tiles(144)
    cfg = TrainConfig(max_epochs=30, schedule="random_learning", learning_rate=1e-3)
    _, recs = train((x, y), cfg, model_config=SMALL)
    assert all(1 <= r.batches <= 2 and r.samples <= 16 for r in recs)
    assert {r.batches for r in recs} == {1, 2}


def test_random_sample_budget_over_100_epochs():
    x, y = tiles(200)
    cfg = TrainConfig(max_epochs=100, schedule="random_learning", learning_rate=1e-3, batch_size=5)
    _, recs = train((x, y), cfg, model_config=SMALL)
    k_max = 200 // 40
    mean = np.mean([r.samples for r in recs])
    assert mean <= (200 / 8) * (k_max + 1) / 2 + 5


def test_seeded_runs_identical():
    x, y = tiles(40)
    cfg = TrainConfig(max_epochs=3, learning_rate=1e-3, seed=11)
    m1, r1 = train((x, y), cfg, model_config=SMALL)
    m2, r2 = train((x, y), cfg, model_config=SMALL)
    assert [r.loss for r in r1] == [r.loss for r in r2]
    for (_, a, _), (_, b, _) in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(a, b)


def test_step_budget_and_partial_epoch():
    x, y = tiles(64)
    cfg = TrainConfig(max_epochs=None, max_steps=5, schedule="sequential", learning_rate=1e-3)
    _, recs = train((x, y), cfg, model_config=SMALL)
    assert sum(r.batches for r in recs) == 5
    assert not recs[-1].complete


def test_seconds_budget():
    x, y = tiles(16)
    cfg = TrainConfig(max_epochs=None, max_seconds=0.5, learning_rate=1e-3)
    _, recs = train((x, y), cfg, model_config=SMALL)
    assert recs and sum(r.seconds for r in recs) < 5


def test_small_model_overfits_and_loss_falls():
    x, y = tiles(1)
    cfg = TrainConfig(max_epochs=300, schedule="sequential", learning_rate=3e-3, batch_size=1)
    best, recs = train((x, y), cfg, model_config=ModelConfig(**{**SMALL.to_dict(), "feature_width": 8}))
    assert recs[-1].loss < 0.2 * recs[0].loss
    assert batch_loss(best, x, y) <= min(r.loss for r in recs if r.complete) * 1.5


def test_records_samples_sum_batch_sizes():
    x, y = tiles(21)
    cfg = TrainConfig(max_epochs=2, schedule="sequential", learning_rate=1e-3)
    _, recs = train((x, y), cfg, model_config=SMALL)
    assert all(r.samples == 21 and r.batches == 3 and r.seconds > 0 for r in recs)


def test_target_psnr_stops_early():
    x, y = tiles(2)
    cfg = TrainConfig(max_epochs=50, schedule="sequential", learning_rate=1e-3, target_psnr=1.0)
    _, recs = train((x, y), cfg, model_config=SMALL)
    assert len(recs) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_training_aborts_epochs(caplog):
    x, y = tiles(8)
    cfg = TrainConfig(max_epochs=3, schedule="sequential", optimizer="sgd", learning_rate=1e30)
    with caplog.at_level(logging.ERROR):
        train((x * 1e10, y), cfg, model_config=SMALL)
    assert "aborted" in caplog.text


def test_image_list_dataset(rng):
    imgs = [rng.random((3, 20, 20))]
    cfg = TrainConfig(max_epochs=2, learning_rate=1e-3, tile_size=9)
    _, recs = train(imgs, cfg, model_config=SMALL)
    assert len(recs) == 2


def test_pad_mode_from_train_config():
    x, y = tiles(8)
    m, _ = train((x, y), TrainConfig(max_epochs=1, pad_mode="zero"), model_config=SMALL)
    assert m.config.pad_mode == "zero"


# -- checkpoints ------------------------------------------------------------------

def test_checkpoint_resume_bit_exact(tmp_path):
    x, y = tiles(16)
    model, recs = train((x, y), TrainConfig(max_epochs=2, learning_rate=1e-3), model_config=SMALL)
    path = tmp_path / "m.srw"
    checkpoint(model, recs, path)
    back, back_recs = resume(path)
    assert np.array_equal(forward(model, x), forward(back, x))
    assert back_recs == recs
    side = json.loads(sidecar_path(path).read_text())
    assert len(side["epochs"]) == len(recs)
    assert set(side["epochs"][0]) >= {"epoch", "batches", "samples", "seconds", "loss", "psnr"}


def test_resume_without_sidecar_warns(tmp_path, caplog):
    model = small()
    path = tmp_path / "m.srw"
    checkpoint(model, [], path)
    sidecar_path(path).unlink()
    with caplog.at_level(logging.WARNING):
        back, recs = resume(path)
    assert "telemetry missing, weights loaded" in caplog.text
    assert recs == []
    x, _ = tiles(2)
    assert np.array_equal(forward(model, x), forward(back, x))


def test_periodic_checkpoint(tmp_path):
    x, y = tiles(8)
    path = tmp_path / "c.srw"
    cfg = TrainConfig(max_epochs=4, learning_rate=1e-3, checkpoint_every=2, checkpoint_path=str(path))
    train((x, y), cfg, model_config=SMALL)
    _, recs = resume(path)
    assert len(recs) == 4


def test_inf_psnr_record_round_trip():
    rec = EpochRecord(0, 1, 8, 0.1, 0.0, math.inf)
    d = rec.to_json()
    assert d["psnr"] == "inf"
    assert EpochRecord.from_json(json.loads(json.dumps(d))) == rec
