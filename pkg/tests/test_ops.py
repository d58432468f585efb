import numpy as np
import pytest

from core import ops
from core.errors import ConfigurationError, DataError, DegenerateBatchError, DimensionError
from core.tensor import Tensor


def test_conv1d_valid_matches_direct_sum(rng):
    x = rng.standard_normal((7, 2))
    w = rng.standard_normal((3, 2, 4))
    b = rng.standard_normal(4)
    out = ops.conv1d(Tensor(x), Tensor(w), Tensor(b)).data
    expected = np.array([[sum(x[t + k] @ w[k][:, o] for k in range(3)) + b[o] for o in range(4)]
                         for t in range(5)])
    np.testing.assert_allclose(out, expected)


def test_conv1d_output_lengths(rng):
    x = Tensor(rng.standard_normal((25, 1)))
    w = Tensor(rng.standard_normal((12, 1, 2)))
    b = Tensor(np.zeros(2))
    assert ops.conv1d(x, w, b, stride=12).shape == (2, 2)
    w3 = Tensor(rng.standard_normal((3, 1, 2)))
    assert ops.conv1d(x, w3, b, padding="same").shape == (25, 2)
    with pytest.raises(ConfigurationError):
        ops.conv1d(x, w3, b, stride=2, padding="same")


def test_conv1d_valid_length_formula(rng):
    b = Tensor(np.zeros(3))
    for _ in range(200):
        k = int(rng.integers(1, 9))
        length = int(rng.integers(k, 60))
        stride = int(rng.integers(1, 6))
        x = Tensor(rng.standard_normal((length, 2)))
        w = Tensor(rng.standard_normal((k, 2, 3)))
        expected = length - k + 1 if stride == 1 else (length - k) // stride + 1
        assert ops.conv1d(x, w, b, stride=stride).shape == (expected, 3)


def test_conv1d_is_a_cross_correlation():
    x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
    w = Tensor(np.array([1.0, -1.0]).reshape(2, 1, 1))
    out = ops.conv1d(x, w, Tensor(np.zeros(1))).data
    np.testing.assert_allclose(out[:, 0], [-1.0, -1.0, -1.0])


def test_conv1d_rejects_short_input_and_channel_mismatch(rng):
    w = Tensor(rng.standard_normal((5, 2, 3)))
    b = Tensor(np.zeros(3))
    with pytest.raises(DimensionError):
        ops.conv1d(Tensor(np.zeros((4, 2))), w, b)
    with pytest.raises(DimensionError):
        ops.conv1d(Tensor(np.zeros((8, 1))), w, b)


def test_leaky_relu_slope():
    out = ops.leaky_relu(Tensor([-2.0, 0.0, 3.0]), 0.3).data
    np.testing.assert_allclose(out, [-0.6, 0.0, 3.0])
    with pytest.raises(ConfigurationError):
        ops.leaky_relu(Tensor([1.0]), 1.5)


def test_batch_norm_train_normalizes_and_updates_state(rng):
    x = rng.standard_normal((50, 3)) * 4 + 2
    state = ops.BatchNormState(3)
    out = ops.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), state, "train").data
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    # variance is var / (var + eps), not exactly 1
    var = x.var(axis=0)
    np.testing.assert_allclose(out.var(axis=0), var / (var + ops.BN_EPSILON), rtol=1e-10)
    np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))


def test_batch_norm_infer_uses_running_statistics():
    state = ops.BatchNormState(2)
    state.running_mean = np.array([1.0, -1.0])
    state.running_var = np.array([4.0, 1.0])
    x = Tensor([[3.0, 0.0]])
    out = ops.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), state, "infer").data
    np.testing.assert_allclose(out, [[2.0 / np.sqrt(4 + 1e-5), 1.0 / np.sqrt(1 + 1e-5)]])


def test_batch_norm_single_step_train_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        ops.batch_norm(Tensor(np.zeros((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    with pytest.raises(ConfigurationError):
        ops.batch_norm(Tensor(np.zeros((3, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       None, "infer")


def test_max_pool_truncates_remainder_and_keeps_first_max():
    x = Tensor(np.array([[1.0], [3.0], [3.0], [0.0], [5.0], [2.0], [9.0]]))
    out = ops.max_pool1d(x, 3)
    np.testing.assert_array_equal(out.data, [[3.0], [5.0]])
    with pytest.raises(DimensionError):
        ops.max_pool1d(Tensor(np.zeros((2, 1))), 3)


def test_global_pools():
    x = Tensor(np.array([[1.0, -1.0], [3.0, -5.0]]))
    np.testing.assert_array_equal(ops.global_avg_pool(x).data, [2.0, -3.0])
    np.testing.assert_array_equal(ops.global_max_pool(x).data, [3.0, -1.0])
    with pytest.raises(DimensionError):
        ops.global_avg_pool(Tensor(np.zeros((0, 2))))


def test_dense_shape_contract(rng):
    w = Tensor(rng.standard_normal((4, 2)))
    b = Tensor(np.zeros(2))
    assert ops.dense(Tensor(np.ones(4)), w, b).shape == (2,)
    with pytest.raises(DimensionError):
        ops.dense(Tensor(np.ones(3)), w, b)


def test_softmax_segments_sum_to_one_per_head(rng):
    out = ops.softmax_segments(Tensor(rng.standard_normal(12) * 10), 3).data
    np.testing.assert_allclose(out.reshape(3, 4).sum(axis=1), 1.0)
    assert np.all(out > 0)
    with pytest.raises(ConfigurationError):
        ops.softmax_segments(Tensor(np.zeros(10)), 3)


def test_softmax_cross_entropy_hard_and_soft_targets():
    logits = Tensor([0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(ops.softmax_cross_entropy(logits, 1).item(), np.log(4))
    soft = np.array([0.5, 0.5, 0.0, 0.0])
    np.testing.assert_allclose(ops.softmax_cross_entropy(logits, soft).item(), np.log(4))
    # large logits stay finite
    assert np.isfinite(ops.softmax_cross_entropy(Tensor([1000.0, -1000.0]), 1).item())
    with pytest.raises(DataError):
        ops.softmax_cross_entropy(logits, 4)
    with pytest.raises(DataError):
        ops.softmax_cross_entropy(logits, np.array([0.5, 0.6, 0.0, 0.0]))


def test_elementwise_shape_checks():
    with pytest.raises(DimensionError):
        ops.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))
    with pytest.raises(DimensionError):
        ops.scale_channels(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(DimensionError):
        ops.concat(Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))
