import math

import numpy as np
import pytest

from boundloop.predictor import (MLP, TrainConfig, adam_init, adam_step, backward, batch_loss, bce_topk_loss,
                                 context_stack, forward, init_model, load_external_probs, load_model,
                                 loss_and_grads, lr_at, save_model, span_mask, train)
from boundloop.corpus_io import write_matrix
from oracles import central_differences, max_relative_error, naive_bce


def small_model(rng, n_feat=3, hidden=(5, 4), radius=1):
    m = init_model(n_feat, hidden, radius, seed=int(rng.integers(1 << 30)))
    for b in m.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    return m


# --- model ------------------------------------------------------------------

def test_init_deterministic_and_bounded():
    a = init_model(40, (256, 128), 7, seed=3)
    b = init_model(40, (256, 128), 7, seed=3)
    assert a.digest() == b.digest()
    assert a.sizes == [600, 256, 128, 1]
    for w, bias in zip(a.weights, a.biases):
        bound = math.sqrt(6 / sum(w.shape))
        assert np.abs(w).max() <= bound
        assert np.all(bias == 0)


def test_init_bounds_many_draws():
    m = init_model(100, (100,), 0, seed=0)
    w = m.weights[0]
    assert w.size == 10000
    bound = math.sqrt(6 / 200)
    assert np.abs(w).max() <= bound
    # uniform: both tails reached
    assert w.max() > 0.99 * bound and w.min() < -0.99 * bound


def test_context_stack_padding():
    f = np.arange(6, dtype=float).reshape(3, 2)
    x = context_stack(f, 1)
    np.testing.assert_array_equal(x[0], [0, 0, 0, 1, 2, 3])
    np.testing.assert_array_equal(x[1], [0, 1, 2, 3, 4, 5])
    np.testing.assert_array_equal(x[2], [2, 3, 4, 5, 0, 0])


def test_zero_model_gives_half():
    m = init_model(4, (3,), 2, seed=0)
    for w in m.weights:
        w[:] = 0
    p = forward(m, np.zeros((7, 4)))
    np.testing.assert_array_equal(p, 0.5)


def test_inference_deterministic():
    m = init_model(4, (8,), 2, seed=1)
    f = np.random.default_rng(0).standard_normal((20, 4))
    np.testing.assert_array_equal(forward(m, f), forward(m, f))


def test_train_mode_seeded():
    m = init_model(4, (8,), 2, seed=1)
    f = np.random.default_rng(0).standard_normal((20, 4))
    a = forward(m, f, train_mode=True, seed=5)
    b = forward(m, f, train_mode=True, seed=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, forward(m, f))
    assert np.all((a > 0) & (a < 1))


def test_single_frame_utterance():
    m = init_model(4, (8,), 3, seed=1)
    p = forward(m, np.ones((1, 4)))
    assert p.shape == (1,)
    assert 0 < p[0] < 1


def test_span_mask_fraction():
    rng = np.random.default_rng(0)
    for n in (1, 7, 100, 333):
        mask = span_mask(n, 0.15, 5, rng)
        assert mask.sum() >= math.ceil(0.15 * n - 1e-9)


# --- loss -------------------------------------------------------------------

def test_topk_example():
    # choose probabilities whose per-frame losses are 0.1, 0.5, 0.3, 0.9 for y=1
    losses = np.array([0.1, 0.5, 0.3, 0.9])
    probs = np.exp(-losses)
    loss, mask = bce_topk_loss(probs, np.ones(4), 0.5)
    assert list(np.flatnonzero(mask)) == [1, 3]
    assert loss == pytest.approx(0.7, abs=1e-12)


def test_topk_ties_prefer_lower_index():
    _, mask = bce_topk_loss(np.full(4, 0.3), np.ones(4), 0.5)
    assert list(np.flatnonzero(mask)) == [0, 1]


def test_keep_all_is_mean_bce():
    rng = np.random.default_rng(2)
    p = rng.uniform(0.01, 0.99, 50)
    y = rng.integers(0, 2, 50)
    loss, mask = bce_topk_loss(p, y, 1.0)
    assert mask.all()
    assert abs(loss - np.mean([naive_bce(a, b) for a, b in zip(p, y)])) < 1e-12


def test_clamped_edges_never_nan():
    loss, _ = bce_topk_loss(np.array([0.0, 1.0]), np.array([0, 1]), 1.0)
    assert np.isfinite(loss) and loss < 1e-6


def test_empty_loss_raises():
    with pytest.raises(ValueError):
        bce_topk_loss(np.array([]), np.array([]), 0.5)


# --- gradients --------------------------------------------------------------

@pytest.mark.parametrize("keep", [1.0, 0.5])
@pytest.mark.parametrize("train_seed", [None, 11])
def test_gradient_matches_finite_differences(keep, train_seed):
    rng = np.random.default_rng(0)
    model = small_model(rng)
    feats = rng.standard_normal((6, 3))
    labels = np.array([0, 1, 1, 0, 0, 1])
    cfg = TrainConfig(keep_fraction=keep, dropout=0.2, mask_fraction=0.15, mask_span=2)

    def f():
        r = np.random.default_rng(train_seed) if train_seed is not None else None
        return loss_and_grads(model, [feats], [labels], cfg, r)[0]

    analytic = backward(model, feats, labels, cfg, seed=train_seed)
    numeric = central_differences(f, model.params())
    assert max_relative_error(analytic, numeric) < 1e-4


def test_unkept_frames_do_not_contribute():
    rng = np.random.default_rng(1)
    model = small_model(rng)
    feats = rng.standard_normal((6, 3))
    labels = np.array([1, 0, 0, 0, 0, 0])
    cfg = TrainConfig(keep_fraction=0.5)
    probs = forward(model, feats)
    _, mask = bce_topk_loss(probs, labels, 0.5)
    grads = backward(model, feats, labels, cfg)
    # output bias gradient is the mean residual over kept frames only
    expected = np.mean((probs - labels)[mask])
    assert grads[-1][0] == pytest.approx(expected, abs=1e-14)


def test_duplicated_batch_same_gradient():
    rng = np.random.default_rng(2)
    model = small_model(rng)
    feats = rng.standard_normal((7, 3))
    labels = rng.integers(0, 2, 7)
    cfg = TrainConfig(keep_fraction=1.0)
    one = backward(model, [feats], [labels], cfg)
    two = backward(model, [feats, feats], [labels, labels], cfg)
    for a, b in zip(one, two):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


# --- optimization -----------------------------------------------------------

CFG = TrainConfig()


def test_lr_schedule_points():
    assert lr_at(0, CFG) == 0.0
    assert lr_at(CFG.warmup_updates, CFG) == pytest.approx(1e-4)
    assert lr_at(CFG.warmup_updates + 500, CFG) == pytest.approx(5e-5, rel=1e-12)
    assert lr_at(CFG.warmup_updates + 1000, CFG) == pytest.approx(0.0, abs=1e-20)
    assert lr_at(10 ** 6, CFG) == pytest.approx(0.0, abs=1e-20)


def test_lr_continuous_and_nonincreasing():
    w = CFG.warmup_updates
    assert abs(lr_at(w, CFG) - lr_at(w - 1, CFG)) <= CFG.peak_lr / w + 1e-18
    after = [lr_at(s, CFG) for s in range(w, w + CFG.cosine_period + 1)]
    assert all(b <= a for a, b in zip(after, after[1:]))


def test_adam_first_step():
    w = [np.zeros(1)]
    state = adam_init(w)
    adam_step(w, [np.ones(1)], state, 0.1, CFG)
    assert w[0][0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


def test_adam_zero_grad_no_change():
    w = [np.array([1.0, -2.0])]
    state = adam_init(w)
    adam_step(w, [np.zeros(2)], state, 0.1, CFG)
    np.testing.assert_array_equal(w[0], [1.0, -2.0])


def test_adam_deterministic():
    rng = np.random.default_rng(3)
    grads = [[rng.standard_normal(3)] for _ in range(5)]
    runs = []
    for _ in range(2):
        w = [np.ones(3)]
        s = adam_init(w)
        for g in grads:
            adam_step(w, g, s, 0.01, CFG)
        runs.append((w[0].copy(), s.m[0].copy(), s.v[0].copy()))
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)


def test_adam_non_finite_names_layer():
    w = [np.zeros((2, 2)), np.zeros(2), np.zeros((2, 1)), np.zeros(1)]
    g = [np.zeros((2, 2)), np.zeros(2), np.array([[np.nan], [0]]), np.zeros(1)]
    with pytest.raises(FloatingPointError, match="layer 2 weights"):
        adam_step(w, g, adam_init(w), 0.1, CFG)


# --- training ---------------------------------------------------------------

def separable_set(rng, n_utts, n_frames=40):
    data = []
    for _ in range(n_utts):
        y = (rng.random(n_frames) < 0.2).astype(np.int8)
        f = np.where(y[:, None] == 1, 1.0, -1.0) * np.ones((n_frames, 2))
        data.append((f, y))
    return data


def test_zero_updates_returns_init():
    rng = np.random.default_rng(4)
    data = separable_set(rng, 4)
    cfg = TrainConfig(max_updates=0, hidden=(8,), context_radius=1, seed=9)
    res = train(data, data, cfg)
    assert res.model.digest() == init_model(2, (8,), 1, seed=9).digest()
    assert res.train_curve == [] and res.dev_curve == []


def test_separable_toy_learns():
    rng = np.random.default_rng(5)
    data = separable_set(rng, 24)
    cfg = TrainConfig(max_updates=500, peak_lr=1e-2, warmup_updates=50, cosine_period=450,
                      hidden=(16, 8), context_radius=1, dropout=0.0, mask_fraction=0.0,
                      keep_fraction=1.0, batch_utterances=4, seed=1)
    res = train(data[:20], data[20:], cfg)
    assert res.train_curve[-1][1] < 0.1
    assert res.best_dev_loss < 0.1


def test_training_deterministic():
    rng = np.random.default_rng(6)
    data = separable_set(rng, 10)
    cfg = TrainConfig(max_updates=60, peak_lr=1e-2, warmup_updates=5, hidden=(8,),
                      context_radius=2, batch_utterances=3, dev_every=20, seed=2)
    a = train(data[:8], data[8:], cfg)
    b = train(data[:8], data[8:], cfg)
    assert a.model.digest() == b.model.digest()
    assert a.dev_curve == b.dev_curve


def test_training_requires_dev():
    data = separable_set(np.random.default_rng(7), 2)
    with pytest.raises(ValueError, match="development"):
        train(data, [], TrainConfig())


def test_long_utterances_are_split():
    rng = np.random.default_rng(8)
    data = separable_set(rng, 2, n_frames=300)
    cfg = TrainConfig(max_updates=3, max_utterance_s=1.0, hidden=(4,), context_radius=0,
                      batch_utterances=1, seed=0)
    # 2 x 300 frames at 20 ms, cut into 50-frame chunks -> 12 batches per epoch
    res = train(data, data, cfg, hop_s=0.02)
    assert len(res.train_curve) == 3


def test_augmenter_called_per_epoch():
    rng = np.random.default_rng(9)
    data = separable_set(rng, 4)
    calls = []

    def aug(i, epoch):
        calls.append((i, epoch))
        return data[i]

    cfg = TrainConfig(max_updates=4, batch_utterances=2, hidden=(4,), context_radius=0)
    train(data, data, cfg, augmenter=aug)
    assert {e for _, e in calls} == {0, 1}
    assert sorted(i for i, e in calls if e == 0) == [0, 1, 2, 3]


# --- files ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    m = init_model(5, (7, 3), 2, seed=4)
    save_model(tmp_path / "m.mlp", m)
    back = load_model(tmp_path / "m.mlp")
    assert back.context_radius == 2
    assert back.digest() == m.digest()


def test_external_probs(tmp_path):
    write_matrix(tmp_path / "a.fmx", np.array([0.1, 0.7, 0.2]), 0.02)
    np.testing.assert_allclose(load_external_probs(tmp_path / "a.fmx", 3), [0.1, 0.7, 0.2], rtol=1e-6)
    with pytest.raises(ValueError, match="frames"):
        load_external_probs(tmp_path / "a.fmx", 4)
    write_matrix(tmp_path / "b.fmx", np.array([0.1, 1.2]), 0.02)
    with pytest.raises(ValueError, match="outside"):
        load_external_probs(tmp_path / "b.fmx")


def test_dev_loss_uses_configured_fraction():
    rng = np.random.default_rng(8)
    data = separable_set(rng, 6)
    base = dict(max_updates=10, peak_lr=1e-2, warmup_updates=2, hidden=(8,), context_radius=1,
                batch_utterances=3, dev_every=5, seed=3)
    full = train(data[:4], data[4:], TrainConfig(**base))
    hard = train(data[:4], data[4:], TrainConfig(**base, dev_keep_fraction=0.5))
    feats, labels = [f for f, _ in data[4:]], [l for _, l in data[4:]]
    assert full.best_dev_loss == pytest.approx(batch_loss(full.model, feats, labels, 1.0))
    assert hard.best_dev_loss == pytest.approx(batch_loss(hard.model, feats, labels, 0.5))
    with pytest.raises(ValueError, match="dev_keep_fraction"):
        TrainConfig(dev_keep_fraction=0.0)
