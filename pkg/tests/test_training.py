import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from spoalign.data import split_by_text
from spoalign.errors import DataError, TrainingError
from spoalign.head import ProjectionHead, score_batch
from spoalign.spo import GlobalStats, Target, TargetSet, compute_global_stats, make_training_targets
from spoalign.training import (
    AdamState,
    TrainConfig,
    TrainedModel,
    adam_step,
    batch_loss_and_grad,
    contrastive_loss,
    fit,
    load_model,
    loss_and_grad,
    lr_at_epoch,
    normalize_prediction,
    regression_loss,
    save_model,
    total_loss,
    train,
)

from oracles import fd_gradient, loss_by_loops


def test_regression_loss_examples():
    assert regression_loss([1, -1], [1, -1]) == 0.0
    assert regression_loss([0], [2]) == 4.0
    assert regression_loss([1, 0, -1], [0, 0, 0]) == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        regression_loss([1, 2], [1])
    with pytest.raises(ValueError):
        regression_loss([], [])


def test_normalize_prediction_examples():
    g = GlobalStats(5.0, 2.0)
    assert normalize_prediction(5.0, g) == 0.0
    assert normalize_prediction(7.0, g) == 1.0
    assert normalize_prediction(7.07, g) == pytest.approx(1.035, abs=1e-12)


def test_contrastive_loss_examples():
    assert contrastive_loss([0.3, -1, 2], [0.3, -1, 2]) == 0.0
    # ordered pairs (0,1) and (1,0): |0 - (-1)| - 0.1 and |0 - 1| - 0.1
    assert contrastive_loss([0, 1], [0, 0], margin=0.1) == pytest.approx(0.9, abs=1e-15)
    assert contrastive_loss([1.0], [5.0]) == 0.0
    with pytest.raises(ValueError):
        contrastive_loss([1, 2], [1, 2, 3])


def test_total_loss_examples():
    assert total_loss([1, 2], [1, 2]) == (0.0, 0.0, 0.0)
    # residuals (r, r - 1) with r^2 + (r - 1)^2 = 8 give reg = 4 and |Δresidual| = 1, so con = 0.9
    r = (1 + np.sqrt(15)) / 2
    tot, reg, con = total_loss([0.0, 1.0], [r, r], 0.5, 0.1, True)
    assert (reg, con, tot) == pytest.approx((4.0, 0.9, 4.45), abs=1e-12)
    assert total_loss([0.0, 1.0], [r, r], 0.5, 0.1, False)[0] == pytest.approx(4.0, abs=1e-12)

    y, p = [0.0, 1.0], [2.0, 1.0]
    tot, reg, con = total_loss(y, p, 0.5, 0.1, True)
    assert tot == pytest.approx(reg + 0.5 * con, abs=1e-15)
    tot, reg, con = total_loss(y, p, 0.5, 0.1, False)
    assert tot == reg


def test_total_loss_lambda_zero_is_regression(rng):
    y, p = rng.standard_normal(7), rng.standard_normal(7)
    assert total_loss(y, p, 0.0, 0.1, True)[0] == regression_loss(y, p)


@given(
    arrays(np.float64, 6, elements=st.floats(-3, 3)),
    arrays(np.float64, 6, elements=st.floats(-3, 3)),
    st.floats(-5, 5),
)
def test_contrastive_shift_invariant(y, p, c):
    assert contrastive_loss(y, p + c) == pytest.approx(contrastive_loss(y, p), abs=1e-9)


@pytest.mark.parametrize("contrastive", [False, True])
def test_loss_and_grad_agrees_with_total_loss(rng, contrastive):
    y, p = rng.standard_normal(5), rng.standard_normal(5)
    tot, reg, con, g = loss_and_grad(y, p, 0.5, 0.1, contrastive)
    assert (tot, reg, con) == pytest.approx(total_loss(y, p, 0.5, 0.1, contrastive), abs=1e-14)
    num = fd_gradient(lambda q: total_loss(y, q, 0.5, 0.1, contrastive)[0], p)
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)


def test_batch_gradient_matches_loop_oracle(rng):
    d, n = 5, 4
    head = ProjectionHead(np.eye(d) + 0.2 * rng.standard_normal((d, d)), 0.1 * rng.standard_normal(d))
    audio, text, y = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal(n)
    g = GlobalStats(5.0, 2.5)
    total, _, _, gw, gb = batch_loss_and_grad(head, audio, text, y, g, 0.5, 0.1, True)
    oracle = lambda w, b: loss_by_loops(w, b, audio, text, y, 5.0, 2.5, 0.5, 0.1, True)
    assert total == pytest.approx(oracle(head.weight, head.bias), abs=1e-12)
    np.testing.assert_allclose(gw, fd_gradient(lambda w: oracle(w, head.bias), head.weight), rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(gb, fd_gradient(lambda b: oracle(head.weight, b), head.bias), rtol=1e-5, atol=1e-9)


def test_lr_schedule():
    cfg = TrainConfig(warmup=True)
    assert lr_at_epoch(0, cfg) == 0.0
    assert lr_at_epoch(5, cfg) == 0.0001
    assert lr_at_epoch(2, cfg) == pytest.approx(0.00004, abs=1e-18)
    lrs = [lr_at_epoch(e, cfg) for e in range(cfg.epochs)]
    assert all(a <= b for a, b in zip(lrs[:6], lrs[1:6]))
    assert set(lrs[5:]) == {0.0001}
    assert {lr_at_epoch(e, TrainConfig()) for e in range(50)} == {0.0001}
    with pytest.raises(ValueError):
        lr_at_epoch(50, cfg)


def test_adam_zero_gradient_fixed_point():
    params = {"w": np.array([1.0, -2.0])}
    new, state = adam_step(params, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(new["w"], params["w"])
    assert state.step == 1

    warm = AdamState(3, {"w": np.array([1.0, 1.0])}, {"w": np.array([1.0, 1.0])})
    _, state = adam_step(params, {"w": np.zeros(2)}, warm, lr=0.1)
    np.testing.assert_allclose(state.m["w"], [0.9, 0.9])
    np.testing.assert_allclose(state.v["w"], [0.999, 0.999])


def test_adam_first_step_hand_algebra():
    # m1/(1-b1) = g and v1/(1-b2) = g^2, so the step is -lr * g / (|g| + eps)
    g = np.array([[0.5, -3.0], [1e-3, 0.0]])
    p = np.zeros_like(g)
    new, _ = adam_step({"p": p}, {"p": g}, AdamState(), lr=0.01, eps=1e-8)
    np.testing.assert_allclose(new["p"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=0)


def test_adam_constant_gradient_second_step():
    # By hand: m2 = (1-b1)(1+b1) g, bias correction 1-b1^2 -> m_hat = g; same for v.
    # Bias-corrected Adam therefore takes the *same* step size again under a constant gradient.
    g = np.array([0.7, -0.2])
    p0 = np.zeros(2)
    p1, s = adam_step({"p": p0}, {"p": g}, AdamState(), lr=0.01)
    p2, s = adam_step(p1, {"p": g}, s, lr=0.01)
    step1 = p1["p"] - p0
    step2 = p2["p"] - p1["p"]
    np.testing.assert_allclose(step2, step1, rtol=1e-12)
    assert s.step == 2


def test_adam_non_finite_gradient():
    with pytest.raises(TrainingError, match="non-finite gradient"):
        adam_step({"p": np.zeros(2)}, {"p": np.array([np.nan, 0.0])}, AdamState(), lr=0.1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=3, warmup=True, warmup_peak_epoch=5)
    TrainConfig(epochs=3)  # peak epoch only matters with warm-up on
    with pytest.raises(ValueError):
        TrainConfig.from_json({"epochs": 3, "bogus": 1})
    assert TrainConfig.for_setting("B").screening and TrainConfig.for_setting("B").contrastive
    assert not TrainConfig.for_setting("A").screening


def test_already_optimal_start(small_synth):
    ds, emb, _ = small_synth
    g = GlobalStats(5.0, 2.0)
    ids = [(r.pair_id, r.listener_id) for r in ds]
    audio = emb.matrix(r.audio_id for r in ds)
    text = emb.matrix(r.text_id for r in ds)
    ideal = (score_batch(ProjectionHead.identity(emb.dim), audio, text) - g.mu_train) / g.sigma_train
    targets = TargetSet([Target(p, l, v) for (p, l), v in zip(ids, ideal)])
    model = train(ds, emb, targets, g, TrainConfig(epochs=3, contrastive=True))
    assert model.loss_history[0][1] < 1e-20
    assert np.max(np.abs(model.head.weight - np.eye(emb.dim))) < 1e-9
    assert np.max(np.abs(model.head.bias)) < 1e-9


def test_single_epoch_history(small_synth):
    ds, emb, _ = small_synth
    cfg = TrainConfig(epochs=1, batch_size=len(ds))
    model = fit(ds, emb, cfg).model
    assert len(model.loss_history) == 1


def test_training_reduces_loss_and_is_deterministic(small_synth, tmp_path):
    ds, emb, _ = small_synth
    cfg = TrainConfig.for_setting("B", seed=4, warmup=True, epochs=20)
    a, b = fit(ds, emb, cfg).model, fit(ds, emb, cfg).model
    assert a.loss_history == b.loss_history
    assert a.loss_history[-1][1] < a.loss_history[0][1]
    assert all(np.isfinite(a.loss_history).ravel())
    save_model(a, tmp_path / "a.json")
    save_model(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_different_seeds_differ(small_synth):
    ds, emb, _ = small_synth
    h0 = fit(ds, emb, TrainConfig(seed=0, epochs=3)).model.loss_history
    h1 = fit(ds, emb, TrainConfig(seed=1, epochs=3)).model.loss_history
    assert h0 != h1


def test_missing_embedding(small_synth):
    ds, emb, _ = small_synth
    from spoalign.data import EmbeddingTable

    partial = EmbeddingTable(emb.dim, {k: emb[k] for k in emb.ids() if not k.startswith("a00000")})
    with pytest.raises(DataError, match="a00000"):
        fit(ds, partial, TrainConfig(epochs=1))


def test_fit_applies_screening_when_configured(small_synth):
    ds, emb, _ = small_synth
    res = fit(ds, emb, TrainConfig.for_setting("C", epochs=1))
    assert res.screening is not None
    assert res.screening.records_before == len(ds)
    assert fit(ds, emb, TrainConfig.for_setting("A", epochs=1)).screening is None


def test_model_json_roundtrip(small_synth, tmp_path):
    ds, emb, _ = small_synth
    model = fit(ds, emb, TrainConfig(epochs=2, seed=9)).model
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.head.weight, model.head.weight)
    assert back.config == model.config
    assert back.loss_history == [tuple(h) for h in model.loss_history]
    meta = json.loads((tmp_path / "m.json").read_text())["metadata"]
    assert meta == {"seed": 9, "config_hash": model.config.config_hash()}
