import numpy as np
import pytest

from nextbuy.data_model import ItemCatalog
from nextbuy.ert import ModelError
from nextbuy.features import default_feature_config
from nextbuy.mlp import (
    MlpModel,
    MlpParams,
    desk_params,
    init_model,
    standardization_stats,
    train_mlp,
)
from nextbuy.sampling import SamplerConfig
from nextbuy.synth import SynthConfig, default_catalog, generate


def tiny_model(f=3, hidden=(2, 2), m=2, seed=0, **params):
    catalog = ItemCatalog(tuple(f"i{j}" for j in range(m)))
    layout = tuple(f"x{j}" for j in range(f))
    p = MlpParams(hidden_sizes=hidden, dropout_hidden=0.0, dropout_input=0.0, **params)
    return init_model(layout, catalog, p, np.random.default_rng(seed))


def bce(model, X, Y):
    p = np.clip(model.forward(X), 1e-12, 1 - 1e-12)
    return float(-np.mean(Y * np.log(p) + (1 - Y) * np.log(1 - p)))


class TestForward:
    def test_zero_weights_give_half(self):
        model = tiny_model()
        for W in model.weights:
            W[:] = 0.0
        out = model.forward(np.array([[1.0, -2.0, 3.0]]))
        np.testing.assert_allclose(out, 0.5)

    def test_inference_deterministic(self):
        model = tiny_model(hidden=(8, 8))
        x = np.array([[0.3, -1.2, 2.0]])
        np.testing.assert_array_equal(model.forward(x), model.forward(x))

    def test_hand_traced_tiny_net(self):
        """Hand-computed forward pass for F=3, hidden (2,2), M=2."""
        model = tiny_model()
        model.weights[0][:] = [[1, 0], [0, 1], [1, 1]]
        model.biases[0][:] = [0, -1]
        model.weights[1][:] = [[2, -1], [1, 1]]
        model.biases[1][:] = [0.5, 0]
        model.weights[2][:] = [[1, -1], [0, 2]]
        model.biases[2][:] = [0, 1]
        x = np.array([[1.0, 2.0, 0.5]])
        # layer 1: [1*1+0.5*1, 2*1+0.5*1-1] = [1.5, 1.5] -> relu same
        # layer 2: [1.5*2+1.5*1+0.5, 1.5*-1+1.5*1] = [5.0, 0.0] -> relu same
        # output:  [5.0*1+0, 5.0*-1+0*2+1] = [5.0, -4.0]
        expected = 1 / (1 + np.exp(-np.array([5.0, -4.0])))
        np.testing.assert_allclose(model.forward(x)[0], expected, rtol=1e-12)

    def test_shape_mismatch(self):
        model = tiny_model()
        with pytest.raises(ModelError):
            model.forward(np.zeros((1, 5)))

    def test_outputs_strictly_inside_unit_interval(self):
        model = tiny_model(hidden=(16,), seed=3)
        X = np.random.default_rng(0).normal(0, 10, size=(40, 3))
        out = model.forward(X)
        assert (out > 0).all() and (out < 1).all()


class TestBackward:
    def test_perfect_fit_stationary_output_bias(self):
        model = tiny_model(seed=1)
        X = np.random.default_rng(2).random((6, 3))
        Y = model.forward(X)  # target == output
        grads_w, grads_b, _ = model.backward(X, Y)
        np.testing.assert_allclose(grads_b[-1], 0.0, atol=1e-12)

    def test_duplicated_batch_same_gradients(self):
        model = tiny_model(hidden=(4, 4), seed=2)
        rng = np.random.default_rng(3)
        X = rng.random((5, 3))
        Y = (rng.random((5, 2)) < 0.5).astype(float)
        g1w, g1b, l1 = model.backward(X, Y)
        g2w, g2b, l2 = model.backward(np.vstack([X, X]), np.vstack([Y, Y]))
        assert l1 == pytest.approx(l2, rel=1e-12)
        for a, b in zip(g1w + g1b, g2w + g2b):
            np.testing.assert_allclose(a, b, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_difference_oracle(self, seed):
        """Central differences on 10 random tiny configurations, dropout off."""
        rng = np.random.default_rng(seed)
        f = int(rng.integers(2, 5))
        m = int(rng.integers(1, 4))
        hidden = tuple(int(h) for h in rng.integers(2, 5, size=int(rng.integers(1, 3))))
        model = tiny_model(f=f, hidden=hidden, m=m, seed=seed + 100)
        for b in model.biases:
            b[:] = rng.normal(scale=0.3, size=b.shape)  # generic point, no zero biases
        X = rng.normal(size=(4, f))
        Y = (rng.random((4, m)) < 0.5).astype(float)
        # central differences are invalid at ReLU kinks; nudge inputs until
        # every hidden pre-activation is clear of zero
        while True:
            _, activations, _ = model.forward(X, keep_trace=True)
            h = X @ model.weights[0] + model.biases[0]
            margins = [np.abs(h).min()]
            for layer in range(1, len(model.weights) - 1):
                z = activations[layer] @ model.weights[layer] + model.biases[layer]
                margins.append(np.abs(z).min())
            if min(margins) > 1e-3:
                break
            X = X + rng.normal(scale=0.05, size=X.shape)
        grads_w, grads_b, _ = model.backward(X, Y)
        eps = 1e-6
        worst = 0.0
        for params, grads in ((model.weights, grads_w), (model.biases, grads_b)):
            for arr, grad in zip(params, grads):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    ix = it.multi_index
                    orig = arr[ix]
                    arr[ix] = orig + eps
                    up = bce(model, X, Y)
                    arr[ix] = orig - eps
                    down = bce(model, X, Y)
                    arr[ix] = orig
                    numeric = (up - down) / (2 * eps)
                    denom = max(abs(numeric), abs(grad[ix]), 1e-8)
                    worst = max(worst, abs(numeric - grad[ix]) / denom)
        assert worst <= 1e-4


class TestDropout:
    @pytest.mark.parametrize("rate", [0.2, 0.5])
    def test_inverted_dropout_expectation(self, rate):
        """Mean of a unit's post-dropout output over >= 10^4 masks equals its
        no-dropout value within 2%."""
        from nextbuy.mlp import apply_dropout

        h = np.array([[0.7, -1.1, 0.4, 2.0, 5.5]])
        rng = np.random.default_rng(42)
        n = 20000
        acc = np.zeros_like(h)
        for _ in range(n):
            dropped, _ = apply_dropout(h, rate, rng)
            acc += dropped
        np.testing.assert_allclose(acc / n, h, rtol=0.02)

    def test_train_mode_requires_rng(self):
        model = tiny_model()
        with pytest.raises(ModelError):
            model.forward(np.zeros((1, 3)), train=True)


class TestStandardization:
    def test_stats(self):
        X = np.random.default_rng(1).normal(3.0, 2.5, size=(500, 4))
        X[:, 2] = 7.0  # constant feature
        mean, std = standardization_stats(X)
        Z = (X - mean) / std
        np.testing.assert_allclose(np.abs(Z.mean(axis=0)), 0.0, atol=1e-6)
        np.testing.assert_allclose(Z[:, [0, 1, 3]].std(axis=0), 1.0, atol=1e-6)
        assert std[2] == 1.0  # zero std replaced


@pytest.fixture(scope="module")
def small_world():
    players, _ = generate(SynthConfig(n_players=60, seed=31))
    catalog = default_catalog(8)
    fconfig = default_feature_config(catalog, ("playtime", "level"))
    return players, catalog, fconfig


class TestTrainMlp:
    def test_epoch_arithmetic(self):
        # 30 iterations x 5 repeats at 3 iterations per epoch = 50 epochs
        params = MlpParams()
        iters_per_epoch = 3
        epochs = params.iterations * params.repeats_per_iteration / iters_per_epoch
        assert epochs == 50

    def test_loss_decreases(self, small_world):
        players, catalog, fconfig = small_world
        from nextbuy.sampling import draw_sample_matrix

        X, Y = draw_sample_matrix(players, SamplerConfig(seed=1), fconfig, catalog, 1)
        params = desk_params(hidden_sizes=(32, 32), iterations=1, repeats_per_iteration=1,
                             batch_users=60, seed=5, learning_rate=0.05)
        model = init_model(fconfig.layout(), catalog, params, np.random.default_rng(0))
        model.mean, model.std = standardization_stats(X)
        losses = []
        rng = np.random.default_rng(1)
        for _ in range(10):
            losses.append(bce(model, X, Y))
            for start in range(0, len(X), params.sgd_batch):
                model.sgd_step(X[start:start + params.sgd_batch],
                               Y[start:start + params.sgd_batch], None)
        assert losses[-1] < losses[0]

    def test_reproducible_weights(self, small_world):
        players, catalog, fconfig = small_world
        params = desk_params(hidden_sizes=(16,), iterations=2, repeats_per_iteration=2,
                             batch_users=60, seed=8)
        a = train_mlp(players, catalog, fconfig, SamplerConfig(seed=8), params)
        b = train_mlp(players, catalog, fconfig, SamplerConfig(seed=8), params)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_zero_samples_error(self, small_world):
        _, catalog, fconfig = small_world
        params = desk_params(hidden_sizes=(8,), iterations=1, batch_users=10, seed=0)
        with pytest.raises(ModelError):
            train_mlp([], catalog, fconfig, SamplerConfig(seed=0), params)


class TestSerialization:
    def test_roundtrip(self, small_world, tmp_path):
        players, catalog, fconfig = small_world
        params = desk_params(hidden_sizes=(16,), iterations=1, repeats_per_iteration=1,
                             batch_users=60, seed=2)
        model = train_mlp(players, catalog, fconfig, SamplerConfig(seed=2), params)
        path = tmp_path / "mlp.json"
        model.save(path)
        back = MlpModel.load(path)
        X = np.random.default_rng(0).normal(size=(5, len(fconfig.layout())))
        np.testing.assert_array_equal(model.forward(X), back.forward(X))
        np.testing.assert_array_equal(model.mean, back.mean)
        np.testing.assert_array_equal(model.std, back.std)

    def test_unknown_schema_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema_version": 99, "kind": "mlp"}')
        with pytest.raises(ModelError):
            MlpModel.load(path)
