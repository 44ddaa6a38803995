import numpy as np
import pytest

import turnroute.estimator as est
from helpers import GEMINI_LITE, GPT5, GPT_OSS, KIMI
from turnroute.estimator import (
    RidgeNet,
    RouterNet,
    TrainConfig,
    TrainExample,
    cosine_lr,
    evaluate_mse,
    grad_check,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)
from turnroute.exceptions import DataError, NumericError
from turnroute.pool import ModelDescriptor

POOL = [GPT5, GPT_OSS, GEMINI_LITE]


def _zeroed_net(dim_x=4, hidden=(2, 2), pool=POOL, encoder_mode="hardcoded"):
    net = RouterNet(pool, dim_x, np.random.default_rng(0), hidden_sizes=hidden,
                    dropout_rate=0.0, encoder_mode=encoder_mode)
    for array in net.params().values():
        array[...] = 0.0
    return net


def _toy_net(dim_x=6, hidden=(8, 4), seed=0, dropout=0.0):
    net = RouterNet(POOL, dim_x, np.random.default_rng(seed), hidden_sizes=hidden,
                    dropout_rate=dropout, encoder_mode="learned")
    # Move biases off zero so no ReLU pre-activation sits exactly on its kink,
    # where central differences legitimately disagree with the subgradient.
    rng = np.random.default_rng(seed + 1000)
    for name, array in net.params().items():
        if name.endswith(".b"):
            array += rng.uniform(-0.1, 0.1, size=array.shape)
    return net


def _batch(net, n=4, seed=1):
    rng = np.random.default_rng(seed)
    return [
        TrainExample(
            z_x=rng.normal(size=net.dim_x),
            model_id=net.ids[int(rng.integers(len(net.ids)))],
            target=float(rng.normal()),
        )
        for _ in range(n)
    ]


def test_predict_zero_net_returns_head_bias():
    net = _zeroed_net()
    net.fusion[2][1][:] = 0.7
    rng = np.random.default_rng(2)
    for _ in range(5):
        assert net.predict(rng.normal(size=4), GPT5) == pytest.approx(0.7, abs=0.0)


def test_predict_hand_computed_toy():
    descriptor = ModelDescriptor("toy", 1000, 2020, 12, 1.0, 1.0, False)
    net = _zeroed_net(dim_x=2, pool=[descriptor])
    # joint = [z_x0, z_x1, attr0..attr7, zeros...]; attr[5] = 0.5 at joint index 7
    net.fusion[0][0][0, 0] = 1.0
    net.fusion[0][0][1, 7] = 1.0
    net.fusion[0][1][:] = [0.1, -10.0]
    net.fusion[1][0][:] = [[2.0, 0.0], [1.0, 1.0]]
    net.fusion[1][1][:] = [0.0, 0.5]
    net.fusion[2][0][:] = [[1.0, -1.0]]
    net.fusion[2][1][:] = [0.25]
    # act1 = [1.6, 0]; act2 = [3.2, 2.1]; out = 3.2 - 2.1 + 0.25
    assert net.predict(np.array([1.5, 0.0]), descriptor) == pytest.approx(1.35, abs=1e-12)


def test_batched_scores_match_per_candidate():
    net = _toy_net(seed=3)
    z_x = np.random.default_rng(4).normal(size=net.dim_x)
    batched = net.score_candidates(z_x)
    singles = np.array([net.predict(z_x, d) for d in POOL])
    assert np.allclose(batched, singles, atol=1e-12, rtol=0.0)


def test_predict_raises_on_non_finite_parameters():
    net = _toy_net()
    net.fusion[0][0][0, 0] = np.nan
    with pytest.raises(NumericError, match="fusion layer 1"):
        net.predict(np.zeros(net.dim_x), GPT5)


def test_loss_perfect_predictions_zero():
    net = _zeroed_net()
    net.fusion[2][1][:] = 0.5
    batch = [TrainExample(np.zeros(4), "gpt-5", 0.5)]
    assert loss(net, batch) == 0.0


def test_loss_single_example_arithmetic():
    net = _zeroed_net()
    net.fusion[2][1][:] = 0.5
    batch = [TrainExample(np.zeros(4), "gpt-5", 0.0)]
    assert loss(net, batch) == pytest.approx(0.25, abs=0.0)


def test_loss_residual_penalty_adds_exactly():
    net = _toy_net(seed=5)
    batch = _batch(net)
    lam = 0.01
    base = loss(net, batch, residual_l2=0.0)
    with_penalty = loss(net, batch, residual_l2=lam)
    expected = sum(float(e @ e) for e in net.encoder.residuals.values())
    assert with_penalty - base == pytest.approx(lam * expected, rel=1e-12)


def test_loss_requires_nonempty_batch():
    with pytest.raises(DataError):
        loss(_toy_net(), [])


def test_grad_check_small_nets():
    for seed in range(3):
        net = _toy_net(seed=seed)
        batch = _batch(net, n=4, seed=seed + 10)
        assert grad_check(net, batch, epsilon=1e-5, residual_l2=0.001) <= 1e-4


def test_grad_check_zero_gradient_at_perfect_fit():
    net = _zeroed_net(dim_x=3, pool=POOL)
    net.fusion[2][1][:] = 0.3
    batch = [TrainExample(np.ones(3), "gpt-5", 0.3), TrainExample(-np.ones(3), "gpt-oss-120b", 0.3)]
    zx = np.stack([b.z_x for b in batch])
    idx = np.array([0, 1])
    y = np.array([0.3, 0.3])
    _, grads = net.loss_and_grads(zx, idx, y, 0.0)
    assert max(np.abs(g).max() for g in grads.values()) <= 1e-8
    assert grad_check(net, batch, residual_l2=0.0) <= 1e-8


def test_residual_gradients_include_l2_term_exactly():
    net = _toy_net(seed=7)
    for layer_w, layer_b in net.fusion:
        layer_w[...] = 0.0
        layer_b[...] = 0.0
    lam = 0.003
    batch = _batch(net, n=3, seed=2)
    zx = np.stack([b.z_x for b in batch])
    idx = np.array([net._index[b.model_id] for b in batch])
    y = np.array([b.target for b in batch])
    _, grads = net.loss_and_grads(zx, idx, y, lam)
    for mid in net.ids:
        expected = 2.0 * lam * net.encoder.residuals[mid]
        assert np.array_equal(grads[f"res.{mid}"], expected)


def _linear_dataset(n, dim_x, rng, noise=0.02):
    examples = []
    for _ in range(n):
        z = rng.normal(size=dim_x)
        target = 0.8 * z[0] + 0.1 + noise * rng.normal()
        examples.append(TrainExample(z, POOL[int(rng.integers(3))].id, float(target)))
    return examples


def test_train_beats_variance_on_learnable_signal():
    rng = np.random.default_rng(8)
    train_set = _linear_dataset(400, 6, rng)
    val_set = _linear_dataset(100, 6, rng)
    config = TrainConfig(max_epochs=30, batch_size=32, seed=1, hidden_sizes=(32, 16),
                         dropout_rate=0.0)
    net, history = train(train_set, val_set, POOL, config)
    targets = np.array([ex.target for ex in train_set])
    variance = float(np.mean((targets - targets.mean()) ** 2))  # brute-force oracle
    zx = np.stack([ex.z_x for ex in train_set])
    idx = np.array([net._index[ex.model_id] for ex in train_set])
    final_mse = evaluate_mse(net, zx, idx, targets)
    assert final_mse < variance


def test_train_converges_to_constant_targets():
    rng = np.random.default_rng(9)
    make = lambda n: [
        TrainExample(rng.normal(size=4), POOL[int(rng.integers(3))].id, 0.42) for _ in range(n)
    ]
    config = TrainConfig(max_epochs=25, batch_size=16, seed=2, hidden_sizes=(16, 8),
                         dropout_rate=0.0)
    net, _ = train(make(200), make(50), POOL, config)
    preds = [net.predict(rng.normal(size=4), d) for d in POOL for _ in range(5)]
    assert all(abs(p - 0.42) < 0.05 for p in preds)


def test_train_stops_after_exactly_patience_stagnant_epochs(monkeypatch):
    planted = iter([1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99])
    monkeypatch.setattr(est, "evaluate_mse", lambda *args, **kwargs: next(planted))
    rng = np.random.default_rng(0)
    examples = [TrainExample(rng.normal(size=4), "gpt-5", 0.0) for _ in range(32)]
    config = TrainConfig(max_epochs=50, patience=3, batch_size=16, seed=0, dropout_rate=0.0)
    _, history = est.train(examples, examples[:8], POOL, config)
    assert len(history) == 5  # best at epoch 1, then 3 stagnant epochs


def test_train_returns_best_validation_checkpoint():
    rng = np.random.default_rng(10)
    train_set = _linear_dataset(200, 4, rng)
    val_set = _linear_dataset(60, 4, rng)
    config = TrainConfig(max_epochs=12, batch_size=32, seed=3, hidden_sizes=(16, 8))
    net, history = train(train_set, val_set, POOL, config)
    zx = np.stack([ex.z_x for ex in val_set])
    idx = np.array([net._index[ex.model_id] for ex in val_set])
    y = np.array([ex.target for ex in val_set])
    assert evaluate_mse(net, zx, idx, y) == min(h.val_loss for h in history)


def test_train_is_deterministic():
    rng = np.random.default_rng(11)
    train_set = _linear_dataset(120, 4, rng)
    val_set = _linear_dataset(40, 4, rng)
    config = TrainConfig(max_epochs=6, batch_size=16, seed=4, hidden_sizes=(16, 8))
    _, h1 = train(train_set, val_set, POOL, config)
    _, h2 = train(train_set, val_set, POOL, config)
    assert [(h.train_loss, h.val_loss) for h in h1] == [(h.train_loss, h.val_loss) for h in h2]


def test_training_loss_decreases_over_first_epochs():
    rng = np.random.default_rng(12)
    train_set = _linear_dataset(300, 6, rng)
    val_set = _linear_dataset(80, 6, rng)
    config = TrainConfig(max_epochs=5, patience=5, batch_size=32, seed=5,
                         hidden_sizes=(32, 16), dropout_rate=0.0)
    _, history = train(train_set, val_set, POOL, config)
    losses = [h.train_loss for h in history]
    assert all(b < a for a, b in zip(losses, losses[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises_with_location():
    net = _toy_net(seed=13)
    net.fusion[0][0][0, 0] = np.inf
    rng = np.random.default_rng(0)
    examples = [TrainExample(rng.normal(size=net.dim_x), "gpt-5", 0.0) for _ in range(8)]
    with pytest.raises(NumericError, match="epoch 0"):
        train(examples, examples[:2], POOL, TrainConfig(max_epochs=2, batch_size=4),
              init_net=net)


def test_cosine_schedule_endpoints():
    config = TrainConfig(learning_rate=1e-3, max_epochs=100)
    assert cosine_lr(0, config) == pytest.approx(1e-3)
    assert cosine_lr(100, config) == pytest.approx(1e-5)
    assert cosine_lr(50, config) < cosine_lr(10, config)


def test_checkpoint_round_trip(tmp_path):
    net = _toy_net(seed=14)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(net, path, TrainConfig())
    restored, meta = load_checkpoint(path, POOL, provider_dim=net.dim_x)
    assert meta["kind"] == "mlp"
    for name, array in net.params().items():
        assert np.array_equal(array, restored.params()[name])
    z = np.random.default_rng(15).normal(size=net.dim_x)
    assert net.predict(z, GPT5) == restored.predict(z, GPT5)


def test_checkpoint_rejects_pool_mismatch(tmp_path):
    net = _toy_net()
    path = tmp_path / "ckpt.npz"
    save_checkpoint(net, path, TrainConfig())
    with pytest.raises(DataError, match="pool model ids"):
        load_checkpoint(path, [GPT5, GPT_OSS, KIMI])


def test_checkpoint_rejects_dim_mismatch(tmp_path):
    net = _toy_net()
    path = tmp_path / "ckpt.npz"
    save_checkpoint(net, path, TrainConfig())
    with pytest.raises(DataError, match="provider dimension"):
        load_checkpoint(path, POOL, provider_dim=net.dim_x + 1)


def test_checkpoint_rejects_tampering(tmp_path):
    net = _toy_net()
    path = tmp_path / "ckpt.npz"
    save_checkpoint(net, path, TrainConfig())
    import json as json_mod

    with np.load(path, allow_pickle=False) as data:
        arrays = {name: data[name] for name in data.files if name != "meta"}
        meta = json_mod.loads(str(data["meta"]))
    arrays["param/fusion.2.b"] = arrays["param/fusion.2.b"] + 1.0
    np.savez(path, meta=json_mod.dumps(meta), **arrays)
    with pytest.raises(DataError, match="digest"):
        load_checkpoint(path, POOL)


def test_ridge_fits_linear_data(tmp_path):
    rng = np.random.default_rng(16)
    examples = _linear_dataset(500, 5, rng, noise=0.0)
    ridge = RidgeNet(POOL, 5, alpha=1e-8)
    ridge.fit(examples)
    for ex in examples[:20]:
        by_id = {d.id: d for d in POOL}
        assert ridge.predict(ex.z_x, by_id[ex.model_id]) == pytest.approx(ex.target, abs=1e-5)
    path = tmp_path / "ridge.npz"
    save_checkpoint(ridge, path)
    restored, meta = load_checkpoint(path, POOL, provider_dim=5)
    assert meta["kind"] == "ridge"
    assert np.array_equal(restored.weights, ridge.weights)
