import numpy as np
import pytest

from gridseek.errors import FormatError, NumericError, ShapeError
from gridseek.nn import (
    Adam,
    Dense,
    Flatten,
    Network,
    ParamStore,
    PointwiseLinear,
    Relu,
    Sigmoid,
    Softmax,
    binary_cross_entropy,
    cross_entropy,
)


def finite_diff_param_grads(net, store, x, loss_fn, h=1e-5):
    """Central finite differences of loss_fn(net.forward(x)) w.r.t. params."""
    grads = {}
    for name, p in store.items():
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn(net.forward(x))
            flat[i] = old - h
            down = loss_fn(net.forward(x))
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric):
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return np.max(np.abs(analytic - numeric)) / scale


def random_dense_net(rng, in_dim, hidden, out_dim):
    store = ParamStore()
    net = Network([
        Dense(in_dim, hidden, store, "l0", rng),
        Relu(),
        Dense(hidden, out_dim, store, "l1", rng),
        Softmax(),
    ])
    return net, store


class TestForward:
    def test_relu(self):
        assert Relu().forward(np.array([-1.0, 0.0, 2.0])).tolist() == [0, 0, 2]

    def test_softmax_symmetry(self):
        np.testing.assert_allclose(Softmax().forward(np.zeros(2)), [0.5, 0.5])

    def test_softmax_sums_to_one_and_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            y = Softmax().forward(rng.normal(0, 50, size=7))
            assert np.all(y > 0)
            assert abs(y.sum() - 1.0) < 1e-9

    def test_dense_identity(self):
        store = ParamStore()
        layer = Dense(3, 3, store, "d")
        layer.W.value[...] = np.eye(3)
        x = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(layer.forward(x), x)

    def test_dense_shape_error_names_layer(self):
        rng = np.random.default_rng(0)
        net, _ = random_dense_net(rng, 4, 5, 3)
        with pytest.raises(ShapeError, match="layer 0"):
            net.forward(np.zeros(7))

    def test_pointwise_is_per_site(self):
        store = ParamStore()
        layer = PointwiseLinear(2, 3, store, "p")
        rng = np.random.default_rng(1)
        layer.W.value[...] = rng.standard_normal((3, 2))
        layer.b.value[...] = rng.standard_normal(3)
        x = rng.standard_normal((2, 4, 5))
        y = layer.forward(x)
        for r in range(4):
            for c in range(5):
                np.testing.assert_allclose(
                    y[:, r, c], layer.W.value @ x[:, r, c] + layer.b.value)


class TestBackward:
    def test_backward_before_forward_raises(self):
        rng = np.random.default_rng(0)
        net, _ = random_dense_net(rng, 3, 4, 2)
        with pytest.raises(ShapeError):
            net.backward(np.zeros(2))

    def test_zero_output_gradient_gives_zero_param_grads(self):
        rng = np.random.default_rng(2)
        net, store = random_dense_net(rng, 3, 4, 2)
        net.forward(rng.standard_normal(3))
        net.backward(np.zeros(2))
        for _, p in store.items():
            assert np.all(p.grad == 0)

    def test_gradients_accumulate(self):
        rng = np.random.default_rng(3)
        net, store = random_dense_net(rng, 3, 4, 2)
        net.forward(rng.standard_normal(3))
        g = rng.standard_normal(2)
        net.backward(g)
        once = {n: p.grad.copy() for n, p in store.items()}
        net.backward(g)
        for n, p in store.items():
            np.testing.assert_allclose(p.grad, 2 * once[n])

    def test_three_layer_net_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        net, store = random_dense_net(rng, 5, 6, 4)
        x = rng.standard_normal(5)
        w = rng.standard_normal(4)

        def loss(y):
            return float(np.dot(w, y))

        y = net.forward(x)
        net.backward(w)
        numeric = finite_diff_param_grads(net, store, x, loss)
        for name, p in store.items():
            assert max_rel_error(p.grad, numeric[name]) < 1e-4

    @pytest.mark.parametrize("trial", range(20))
    def test_randomized_layer_stacks_match_finite_differences(self, trial):
        # mixed pointwise/dense stacks on random small shapes
        rng = np.random.default_rng(100 + trial)
        c_in = int(rng.integers(1, 4))
        c_mid = int(rng.integers(1, 4))
        h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        out = int(rng.integers(2, 5))
        store = ParamStore()
        tail = Softmax() if trial % 2 == 0 else Sigmoid()
        net = Network([
            PointwiseLinear(c_in, c_mid, store, "pw", rng),
            Relu(),
            Flatten(),
            Dense(c_mid * h * w, out, store, "fc", rng),
            tail,
        ])
        x = rng.standard_normal((c_in, h, w))
        wvec = rng.standard_normal(out)

        def loss(y):
            return float(np.dot(wvec, y))

        net.forward(x)
        net.backward(wvec)
        numeric = finite_diff_param_grads(net, store, x, loss)
        for name, p in store.items():
            assert max_rel_error(p.grad, numeric[name]) < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        net, store = random_dense_net(rng, 5, 6, 4)
        x = rng.standard_normal(5)
        w = rng.standard_normal(4)
        net.forward(x)
        g_in = net.backward(w)
        h = 1e-5
        numeric = np.zeros(5)
        for i in range(5):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            numeric[i] = (np.dot(w, net.forward(xp))
                          - np.dot(w, net.forward(xm))) / (2 * h)
        assert max_rel_error(g_in, numeric) < 1e-4


class TestLosses:
    def test_cross_entropy_one_hot_match(self):
        p = np.array([1e-12, 1.0 - 1e-12])
        t = np.array([0.0, 1.0])
        loss, _ = cross_entropy(p, t)
        assert loss == pytest.approx(0.0, abs=1e-9)

    def test_cross_entropy_uniform_vs_onehot(self):
        p = np.full(4, 0.25)
        t = np.array([0.0, 1.0, 0.0, 0.0])
        loss, dlogits = cross_entropy(p, t)
        assert loss == pytest.approx(np.log(4))
        np.testing.assert_allclose(dlogits, p - t)

    def test_cross_entropy_uniform_target(self):
        loss, _ = cross_entropy(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        assert loss == pytest.approx(np.log(2))

    def test_cross_entropy_invalid_target(self):
        with pytest.raises(ValueError):
            cross_entropy(np.array([0.5, 0.5]), np.array([0.5, 0.8]))

    def test_bce_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        store = ParamStore()
        net = Network([Dense(4, 3, store, "fc", rng), Sigmoid()])
        x = rng.standard_normal(4)
        labels = np.array([1.0, 0.0, 1.0])

        def loss(y):
            return binary_cross_entropy(y, labels)[0]

        pred = net.forward(x)
        _, dlogits = binary_cross_entropy(pred, labels)
        net.backward(dlogits, from_logits=True)
        numeric = finite_diff_param_grads(net, store, x, loss)
        for name, p in store.items():
            assert max_rel_error(p.grad, numeric[name]) < 1e-4


class TestAdam:
    def test_first_step_moves_by_lr(self):
        store = ParamStore()
        p = store.add("w", np.array([0.0]))
        opt = Adam(store, lr=0.1)
        p.grad[...] = 1.0
        opt.step()
        # bias-corrected first step is -lr * g/|g| = -0.1
        assert p.value[0] == pytest.approx(-0.1, rel=1e-6)

    def test_zero_gradient_leaves_params(self):
        store = ParamStore()
        p = store.add("w", np.array([1.5, -2.0]))
        opt = Adam(store, lr=0.1)
        opt.step()
        np.testing.assert_array_equal(p.value, [1.5, -2.0])

    def test_grads_zeroed_and_counter(self):
        store = ParamStore()
        p = store.add("w", np.zeros(2))
        opt = Adam(store)
        p.grad[...] = 3.0
        opt.step()
        assert np.all(p.grad == 0)
        assert opt.state.t == 1

    def test_identical_runs_bitwise(self):
        def run():
            rng = np.random.default_rng(9)
            store = ParamStore()
            p = store.add("w", rng.standard_normal(4))
            opt = Adam(store, lr=0.01)
            for i in range(50):
                p.grad[...] = np.sin(p.value * (i + 1))
                opt.step()
            return p.value.copy()

        np.testing.assert_array_equal(run(), run())

    def test_nonfinite_gradient_aborts(self):
        store = ParamStore()
        p = store.add("w", np.zeros(2))
        opt = Adam(store)
        p.grad[...] = np.array([np.nan, 0.0])
        with pytest.raises(NumericError):
            opt.step()


class TestCheckpointFormat:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        store = ParamStore()
        store.add("a.W", rng.standard_normal((3, 4)))
        store.add("a.b", rng.standard_normal(3))
        path = str(tmp_path / "p.vasp")
        store.save(path)
        other = ParamStore()
        other.add("a.W", np.zeros((3, 4)))
        other.add("a.b", np.zeros(3))
        other.load(path)
        np.testing.assert_array_equal(other["a.W"].value, store["a.W"].value)
        np.testing.assert_array_equal(other["a.b"].value, store["a.b"].value)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "p.vasp"
        path.write_bytes(b"XXXX\x01\x00")
        store = ParamStore()
        store.add("a", np.zeros(1))
        with pytest.raises(FormatError):
            store.load(str(path))

    def test_truncation_detected(self, tmp_path):
        store = ParamStore()
        store.add("a.W", np.ones((2, 2)))
        path = str(tmp_path / "p.vasp")
        store.save(path)
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[:-3])
        with pytest.raises(FormatError):
            store.load(path)

    def test_shape_mismatch_detected(self, tmp_path):
        store = ParamStore()
        store.add("a.W", np.ones((2, 2)))
        path = str(tmp_path / "p.vasp")
        store.save(path)
        other = ParamStore()
        other.add("a.W", np.zeros((3, 2)))
        with pytest.raises(FormatError):
            other.load(path)
