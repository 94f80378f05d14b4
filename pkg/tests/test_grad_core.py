import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffe.errors import ConfigurationError, DimensionError, TrainingError, UsageError
from diffe.grad_core import (
    CyclicLr, NDValue, RMSProp, RmsPropState, Tape, adaptive_avg_pool, add, affine, backward, concat,
    conv1d, cyclic_lr, elu, group_norm, l1_loss, mean, mse_loss, mul, rmsprop_step, upsample_nearest,
)

from helpers import grad_check, leaf, projected


def v64(x, grad=False):
    return NDValue(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- NDValue / tape ------------------------------------------------------------

def test_ndvalue_defaults_to_float32_and_no_grad():
    v = NDValue([1, 2, 3])
    assert v.dtype == np.float32
    assert v.grad is None and not v.requires_grad
    assert v.shape == (3,)


def test_square_gradient():
    x = v64(3.0, grad=True)
    with Tape() as tape:
        y = mul(x, x)
    backward(y, tape)
    assert x.grad == pytest.approx(6.0)


def test_backward_rejects_non_scalar():
    x = v64([1.0, 2.0], grad=True)
    with Tape() as tape:
        y = mul(x, x)
    with pytest.raises(UsageError):
        backward(y, tape)


def test_backward_rejects_output_from_other_tape():
    x = v64(2.0, grad=True)
    with Tape():
        y = mul(x, x)
    with pytest.raises(UsageError):
        backward(y, Tape())


def test_gradients_accumulate_until_cleared():
    x = v64(2.0, grad=True)
    for _ in range(2):
        with Tape() as tape:
            y = mul(x, x)
        backward(y, tape)
    assert x.grad == pytest.approx(8.0)
    x.zero_grad()
    assert x.grad is None


def test_detached_branch_gets_no_gradient():
    x = v64([1.0, 2.0], grad=True)
    w = v64([3.0, 4.0], grad=True)
    with Tape() as tape:
        h = mul(x, w)
        y = mean(add(h, mul(h.detach(), w.detach())))
    backward(y, tape)
    assert np.allclose(x.grad, [1.5, 2.0])
    assert h.detach().grad is None


def test_no_tape_records_nothing():
    x = v64([1.0], grad=True)
    y = mul(x, x)
    assert y.is_leaf and not y.requires_grad


def test_each_record_replayed_once():
    calls = []
    x = v64([1.0, 2.0], grad=True)
    with Tape() as tape:
        y = mean(mul(elu(x), x))
    for rec in tape.records:
        fn = rec.backward
        rec.backward = (lambda f, name: lambda g: (calls.append(name), f(g))[1])(fn, rec.name)
    backward(y, tape)
    assert sorted(calls) == sorted(r.name for r in tape.records)
    assert len(calls) == len(tape)


# -- conv1d ------------------------------------------------------------------

def test_conv1d_identity_kernel():
    out = conv1d(v64([[1, 2, 3]]), v64([[[1]]]), v64([0]))
    assert np.allclose(out.data, [[1, 2, 3]])


def test_conv1d_is_cross_correlation():
    out = conv1d(v64([[1, 2, 3]]), v64([[[1, 0, -1]]]), v64([0]))
    assert np.allclose(out.data, [[-2]])


@given(c=st.integers(1, 4), length=st.integers(1, 20), seed=st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_conv1d_identity_kernel_any_input(c, length, seed):
    x = np.random.default_rng(seed).standard_normal((c, length))
    w = np.eye(c)[:, :, None]
    assert np.array_equal(conv1d(v64(x), v64(w)).data, x)


@given(length=st.integers(1, 30), k=st.integers(1, 5), stride=st.integers(1, 3), pad=st.integers(0, 2))
@settings(max_examples=60, deadline=None)
def test_conv1d_output_length(length, k, stride, pad):
    if k > length + 2 * pad:
        with pytest.raises(DimensionError):
            conv1d(v64(np.ones((2, length))), v64(np.ones((3, 2, k))), stride=stride, padding=pad)
        return
    out = conv1d(v64(np.ones((2, length))), v64(np.ones((3, 2, k))), stride=stride, padding=pad)
    assert out.shape == (3, (length + 2 * pad - k) // stride + 1)


def test_conv1d_matches_direct_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 11))
    w = rng.standard_normal((4, 3, 3))
    b = rng.standard_normal(4)
    out = conv1d(v64(x), v64(w), v64(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    ref = np.stack([np.einsum("bck,ock->bo", xp[:, :, i:i + 3], w) for i in range(0, 11, 2)], axis=2) + b[:, None]
    assert np.allclose(out, ref)


def test_conv1d_channel_mismatch_names_axis():
    with pytest.raises(DimensionError, match="channel"):
        conv1d(v64(np.ones((3, 8))), v64(np.ones((2, 4, 3))))


def test_conv1d_gradient_4x32():
    rng = np.random.default_rng(1)
    x, w, b = leaf(rng, 4, 32), leaf(rng, 5, 4, 3), leaf(rng, 5)
    r = rng.standard_normal((5, 30))
    assert grad_check(lambda: projected(conv1d(x, w, b), r), [x, w, b]) < 1e-4


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (2, 0), (3, 2)])
def test_conv1d_gradient_batched(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x, w, b = leaf(rng, 2, 3, 13), leaf(rng, 4, 3, 3), leaf(rng, 4)
    shape = conv1d(x, w, b, stride, pad).shape
    r = rng.standard_normal(shape)
    assert grad_check(lambda: projected(conv1d(x, w, b, stride, pad), r), [x, w, b]) < 1e-4


# -- group_norm --------------------------------------------------------------

def test_group_norm_constant_input_is_zero():
    out = group_norm(v64(np.full((8, 16), 3.0)), 4, v64(np.ones(8)), v64(np.zeros(8)), eps=1e-5)
    assert np.max(np.abs(out.data)) <= 1e-2


def test_group_norm_hand_case():
    out = group_norm(v64([[1, 1], [3, 3]]), 1, v64([1, 1]), v64([0, 0]), eps=1e-12)
    assert np.allclose(out.data, [[-1, -1], [1, 1]], atol=1e-6)


def test_group_norm_requires_divisible_channels():
    with pytest.raises(ConfigurationError):
        group_norm(v64(np.ones((6, 4))), 4, v64(np.ones(6)), v64(np.zeros(6)))


def test_group_norm_gradient():
    rng = np.random.default_rng(2)
    x, g, b = leaf(rng, 8, 16), leaf(rng, 8), leaf(rng, 8)
    r = rng.standard_normal((8, 16))
    assert grad_check(lambda: projected(group_norm(x, 4, g, b), r), [x, g, b]) < 1e-4


@given(groups=st.sampled_from([1, 2, 4]), length=st.integers(4, 32), seed=st.integers(0, 2**16),
       scale=st.floats(1.0, 100.0))
@settings(max_examples=40, deadline=None)
def test_group_norm_group_statistics(groups, length, seed, scale):
    x = scale * np.random.default_rng(seed).standard_normal((2, 8, length))
    out = group_norm(v64(x), groups, v64(np.ones(8)), v64(np.zeros(8))).data.reshape(2, groups, -1)
    assert np.all(np.abs(out.mean(axis=-1)) <= 1e-5)
    assert np.all(np.abs(out.var(axis=-1) - 1) <= 1e-3)


# -- elementwise ---------------------------------------------------------------

def test_elu_values():
    out = elu(v64([0.0, 1.0, -1.0])).data
    assert out[0] == 0.0 and out[1] == 1.0
    assert out[2] == pytest.approx(-0.63212, abs=1e-5)


def test_elu_gradient_away_from_kink():
    rng = np.random.default_rng(3)
    x = leaf(rng, 5, 7)
    x.data[np.abs(x.data) < 1e-2] = 0.5
    r = rng.standard_normal((5, 7))
    assert grad_check(lambda: projected(elu(x, 0.7), r), [x]) < 1e-4


# -- affine --------------------------------------------------------------------

def test_affine_identity():
    x = v64([1.0, -2.0, 3.0])
    assert np.allclose(affine(x, v64(np.eye(3)), v64(np.zeros(3))).data, x.data)


def test_affine_hand_case():
    assert np.allclose(affine(v64([1, 2]), v64([[3, 4]]), v64([1])).data, [12])


def test_affine_dimension_mismatch():
    with pytest.raises(DimensionError):
        affine(v64([1, 2, 3]), v64([[3, 4]]), v64([1]))


@pytest.mark.parametrize("batched", [False, True])
def test_affine_gradient(batched):
    rng = np.random.default_rng(4)
    x = leaf(rng, 3, 6) if batched else leaf(rng, 6)
    w, b = leaf(rng, 4, 6), leaf(rng, 4)
    r = rng.standard_normal((3, 4) if batched else (4,))
    assert grad_check(lambda: projected(affine(x, w, b), r), [x, w, b]) < 1e-4


# -- pooling -------------------------------------------------------------------

def test_adaptive_pool_examples():
    x = v64([[1, 2, 3, 4]])
    assert np.allclose(adaptive_avg_pool(x, 4).data, x.data)
    assert np.allclose(adaptive_avg_pool(x, 1).data, [[2.5]])
    assert np.allclose(adaptive_avg_pool(x, 2).data, [[1.5, 3.5]])


def test_adaptive_pool_overlapping_bins():
    # bins [0, 3) and [2, 5)
    assert np.allclose(adaptive_avg_pool(v64([[1, 2, 3, 4, 5]]), 2).data, [[2.0, 4.0]])


def test_adaptive_pool_bad_target():
    with pytest.raises(ConfigurationError):
        adaptive_avg_pool(v64([[1, 2]]), 0)


@given(n=st.integers(1, 8), mult=st.integers(1, 6), seed=st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_adaptive_pool_preserves_mean_when_divisible(n, mult, seed):
    x = np.random.default_rng(seed).standard_normal((3, n * mult))
    out = adaptive_avg_pool(v64(x), n).data
    assert np.allclose(out.mean(axis=-1), x.mean(axis=-1))


@pytest.mark.parametrize("length,target", [(8, 1), (7, 3), (10, 4)])
def test_adaptive_pool_gradient(length, target):
    rng = np.random.default_rng(length)
    x = leaf(rng, 2, 3, length)
    r = rng.standard_normal((2, 3, target))
    assert grad_check(lambda: projected(adaptive_avg_pool(x, target), r), [x]) < 1e-4


# -- losses --------------------------------------------------------------------

def test_l1_examples():
    assert l1_loss(v64([1, 3]), v64([1, 3])).item() == 0.0
    assert l1_loss(v64([1, 3]), v64([0, 0])).item() == 2.0
    assert np.array_equal(l1_loss(v64([1, -1]), v64([0, 0]), reduce="none").data, [1, 1])


def test_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        l1_loss(v64([1, 2]), v64([1, 2, 3]))


def test_mse_examples():
    assert mse_loss(v64([1, 2]), v64([1, 2])).item() == 0.0
    assert mse_loss(v64([1, 0]), v64([0, 1])).item() == 1.0


def test_mse_gradient_closed_form():
    rng = np.random.default_rng(5)
    p, t = leaf(rng, 3, 4), leaf(rng, 3, 4)
    with Tape() as tape:
        loss = mse_loss(p, t)
    backward(loss, tape)
    assert np.allclose(p.grad, 2 * (p.data - t.data) / 12)
    assert grad_check(lambda: mse_loss(p, t), [p, t]) < 1e-4


def test_l1_gradient_away_from_ties():
    rng = np.random.default_rng(6)
    p, t = leaf(rng, 4, 5), leaf(rng, 4, 5)
    p.data += np.sign(p.data - t.data) * 0.1
    r = rng.standard_normal((4, 5))
    assert grad_check(lambda: l1_loss(p, t), [p, t]) < 1e-4
    assert grad_check(lambda: projected(l1_loss(p, t, reduce="none"), r), [p, t]) < 1e-4


def test_structural_op_gradients():
    rng = np.random.default_rng(7)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 2, 4)
    r = rng.standard_normal((2, 5, 8))
    assert grad_check(lambda: projected(upsample_nearest(concat([a, b])), r), [a, b]) < 1e-4


# -- RMSProp -------------------------------------------------------------------

def test_rmsprop_zero_gradient_is_noop():
    p = v64([1.0, -2.0])
    s = RmsPropState.for_param(p)
    rmsprop_step(p, np.zeros(2), s, lr=0.01)
    assert np.array_equal(p.data, [1.0, -2.0])


def test_rmsprop_hand_step():
    p = v64([0.0])
    s = RmsPropState(np.zeros(1), decay=0.99, epsilon=1e-8)
    rmsprop_step(p, np.ones(1), s, lr=0.01)
    assert s.accumulator[0] == pytest.approx(0.01)
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)


def test_rmsprop_deterministic():
    outs = []
    for _ in range(2):
        p = v64([0.5, 0.25])
        s = RmsPropState.for_param(p)
        for _ in range(3):
            rmsprop_step(p, np.array([0.3, -0.7]), s, lr=1e-3)
        outs.append(p.data.copy())
    assert np.array_equal(*outs)


def test_rmsprop_nonfinite_gradient_reports_step():
    p = v64([0.0])
    with pytest.raises(TrainingError, match="step 7"):
        rmsprop_step(p, np.array([np.nan]), RmsPropState.for_param(p), 0.01, step=7)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
@settings(max_examples=50, deadline=None)
def test_rmsprop_accumulator_nonnegative(grads):
    p = v64([0.0])
    s = RmsPropState.for_param(p)
    for g in grads:
        rmsprop_step(p, np.array([g]), s, 1e-3)
        assert s.accumulator[0] >= 0


def test_rmsprop_optimizer_skips_params_without_grad():
    a, b = v64([1.0], grad=True), v64([1.0], grad=True)
    opt = RMSProp([a, b])
    a.grad = np.array([1.0])
    opt.step(0.01)
    assert a.data[0] != 1.0 and b.data[0] == 1.0


# -- cyclic lr -----------------------------------------------------------------

def test_cyclic_lr_endpoints():
    sched = CyclicLr(step_size=100)
    assert cyclic_lr(0, sched) == pytest.approx(9e-5)
    assert cyclic_lr(100, sched) == pytest.approx(1.5e-3)
    assert cyclic_lr(200, sched) == pytest.approx(9e-5)
    assert cyclic_lr(50, sched) == pytest.approx((9e-5 + 1.5e-3) / 2)


def test_cyclic_lr_rejects_inverted_bounds():
    with pytest.raises(ConfigurationError):
        CyclicLr(base_lr=1e-2, max_lr=1e-3)


@given(step=st.integers(0, 10**6), ss=st.integers(1, 5000))
def test_cyclic_lr_in_range(step, ss):
    sched = CyclicLr(step_size=ss)
    assert sched.base_lr - 1e-15 <= cyclic_lr(step, sched) <= sched.max_lr + 1e-15


@given(cycle=st.integers(0, 50), ss=st.integers(1, 500))
def test_cyclic_lr_hits_both_endpoints_each_cycle(cycle, ss):
    sched = CyclicLr(step_size=ss)
    lrs = [cyclic_lr(s, sched) for s in (2 * cycle * ss, (2 * cycle + 1) * ss)]
    assert math.isclose(lrs[0], sched.base_lr) and math.isclose(lrs[1], sched.max_lr)
