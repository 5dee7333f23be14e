import numpy as np
import pytest

from dipv import nn
from dipv.errors import InvalidInput

from gradcheck import OPERATIONS, TOLERANCE, worst_over_trials


@pytest.mark.parametrize("name", list(OPERATIONS))
def test_backward_matches_finite_differences(name):
    assert worst_over_trials(name, trials=20, seed=1) <= TOLERANCE


def test_affine_shape_errors():
    with pytest.raises(InvalidInput):
        nn.affine_forward(np.zeros((2, 3)), np.zeros((4, 5)))
    with pytest.raises(InvalidInput):
        nn.affine_forward(np.zeros((2, 3)), np.zeros((3, 5)), np.zeros(4))


def test_leaky_relu_values():
    y, _ = nn.leaky_relu_forward(np.array([-2.0, 0.0, 3.0]))
    np.testing.assert_array_equal(y, [-0.02, 0.0, 3.0])
    y, _ = nn.relu_forward(np.array([-2.0, 3.0]))
    np.testing.assert_array_equal(y, [0.0, 3.0])


def test_sigmoid_extremes():
    s = nn.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_layernorm_statistics(rng):
    y, _ = nn.layernorm_forward(rng.normal(3.0, 5.0, size=(10, 64)))
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-5)
    with pytest.raises(InvalidInput):
        nn.layernorm_forward(np.zeros(3), eps=0.0)


def test_softmax_rows_sum_to_one(rng):
    p, _ = nn.softmax_forward(rng.normal(size=(5, 7)) * 100)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)
    assert np.all(p >= 0)


def test_dropout_modes(rng):
    x = rng.normal(size=(200, 50))
    y, mask = nn.dropout_forward(x, 0.5, False, 0)
    assert y is x and mask is None
    y, mask = nn.dropout_forward(x, 0.2, True, 3)
    kept = mask > 0
    assert abs(kept.mean() - 0.8) < 0.01
    np.testing.assert_allclose(y[kept], x[kept] / 0.8)
    with pytest.raises(InvalidInput):
        nn.dropout_forward(x, 1.0, True, 0)


def test_attention_uniform_when_keys_equal(rng):
    d = 4
    p = nn.ParameterSet()
    nn.init_attention(p, d, rng)
    keys = np.tile(rng.normal(size=(1, d)), (5, 1))
    values = rng.normal(size=(5, d))
    out, cache = nn.cross_attention_forward(rng.normal(size=(3, d)), keys, values, p)
    np.testing.assert_allclose(cache[6], 0.2)
    np.testing.assert_allclose(out, np.tile(values.mean(0) @ p["attn_wv"] @ p["attn_wo"], (3, 1)))


def test_gate_extremes(rng):
    d = 3
    p = nn.ParameterSet()
    nn.init_gate(p, d, rng)
    local, glob = rng.normal(size=(4, d)), rng.normal(size=d)
    p.params["gate_w"][:] = 0
    p.params["gate_b"][:] = 50.0
    out, _ = nn.gate_fusion_forward(local, glob, p)
    np.testing.assert_allclose(out, local, atol=1e-15)
    p.params["gate_b"][:] = -50.0
    out, _ = nn.gate_fusion_forward(local, glob, p)
    np.testing.assert_allclose(out, np.tile(glob @ p["gate_proj"], (4, 1)), atol=1e-15)


def test_cross_entropy_values():
    logits = np.zeros((1, 4))
    loss, grad = nn.cross_entropy_label_smoothing(logits, [2], 0.0)
    assert loss == pytest.approx(np.log(4))
    np.testing.assert_allclose(grad, [[0.25, 0.25, -0.75, 0.25]])
    with pytest.raises(InvalidInput):
        nn.cross_entropy_label_smoothing(logits, [4])


def test_cross_entropy_smoothing_floor():
    # with smoothing the loss is bounded below by the target entropy
    eps, c = 0.1, 6
    logits = np.array([[100.0, 0, 0, 0, 0, 0]])
    loss, _ = nn.cross_entropy_label_smoothing(logits, [0], eps)
    assert loss > 0.5


def test_cosine_schedule():
    assert nn.cosine_lr(0, 100) == pytest.approx(0.1)
    assert nn.cosine_lr(100, 100) == pytest.approx(0.001)
    assert nn.cosine_lr(50, 100) == pytest.approx(0.0505)
    assert nn.cosine_lr(200, 100) == pytest.approx(0.001)


def test_sgd_momentum_recurrence():
    p = nn.ParameterSet()
    p.add("w", np.array([1.0]))
    state = nn.TrainState(p, momentum=0.5, lr_start=0.1, lr_end=0.1, total_steps=10)
    p.grads["w"][:] = 1.0
    nn.sgd_step(state)
    nn.sgd_step(state)
    # v1 = 1, v2 = 1.5; w = 1 - 0.1 - 0.15
    np.testing.assert_allclose(p["w"], [0.75])
    assert state.step == 2


def test_clip_grad_norm():
    p = nn.ParameterSet()
    p.add("a", np.zeros(2))
    p.add("b", np.zeros(1))
    p.grads["a"][:] = [3.0, 0.0]
    p.grads["b"][:] = [4.0]
    assert nn.clip_grad_norm(p, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(p.grads["a"], [0.6, 0.0])
    np.testing.assert_allclose(p.grads["b"], [0.8])
    assert nn.clip_grad_norm(p, 0.0) == pytest.approx(1.0)


def test_checkpoint_round_trip(tmp_path, rng):
    p = nn.ParameterSet()
    p.add("w", rng.normal(size=(3, 4)))
    p.add("b", rng.normal(size=4))
    p.add("s", np.array(2.5))
    path = tmp_path / "params.bin"
    nn.save_checkpoint(p, path)
    q = nn.load_checkpoint(path)
    assert q.names() == p.names()
    for name in p:
        assert q[name].tobytes() == p[name].tobytes()
        assert q[name].shape == p[name].shape
    assert q.checksum() == p.checksum()


def test_parameter_set_rejects_duplicates():
    p = nn.ParameterSet()
    p.add("w", np.zeros(2))
    with pytest.raises(InvalidInput):
        p.add("w", np.zeros(2))
