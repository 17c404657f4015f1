"""
Tests for ZOH discretization, the linear-recurrence scans and the selective SSM.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadmamba.autograd import Tensor, gradcheck, parameter, precision
from roadmamba.constants import ZOH_SERIES_THRESHOLD
from roadmamba.errors import ConfigError, NumericalError, ShapeError
from roadmamba.ssm import (
    SelectiveProjections,
    SelectiveSsm,
    SsmContinuous,
    SsmDiscrete,
    causal_conv,
    combine,
    discretize_zoh,
    kernel_conv,
    prefix_parallel,
    prefix_sequential,
    scan_parallel,
    scan_sequential,
    selective_forward,
    selective_scan,
    zoh_phi,
    zoh_phi_grad,
)


def _scalar_ssm(a_bar, b_bar, c=1.0):
    shape = (1, 1)
    return SsmDiscrete(
        A_bar=np.full(shape, a_bar), B_bar=np.full(shape, b_bar), C=np.full(shape, c)
    )


# =============================================================================
# ZOH
# =============================================================================


def test_zoh_half_life_example():
    cont = SsmContinuous(A=np.array([[-1.0]]), B=np.array([1.0]), C=np.array([1.0]))
    disc = discretize_zoh(cont, np.array([[math.log(2.0)]]))
    np.testing.assert_allclose(disc.A_bar, [[[0.5]]], rtol=1e-12)
    np.testing.assert_allclose(disc.B_bar, [[[0.5]]], rtol=1e-12)


def test_zoh_tiny_step_uses_first_order_input_weight():
    cont = SsmContinuous(A=np.array([[-1.0]]), B=np.array([2.0]), C=np.array([1.0]))
    disc = discretize_zoh(cont, np.array([[1e-8]]))
    np.testing.assert_allclose(disc.B_bar, [[[2e-8]]], rtol=1e-6)
    assert disc.A_bar[0, 0, 0] < 1.0


def test_zoh_rejects_nonpositive_delta():
    cont = SsmContinuous.initial(lanes=2, state=3)
    with pytest.raises(NumericalError):
        discretize_zoh(cont, np.array([[0.1, 0.0]]))
    with pytest.raises(NumericalError):
        discretize_zoh(cont, np.array([[0.1, np.nan]]))


def test_zoh_decay_stays_inside_unit_interval(rng):
    cont = SsmContinuous.initial(lanes=4, state=6)
    disc = discretize_zoh(cont, rng.uniform(1e-3, 1.0, size=(10, 4)))
    assert disc.A_bar.shape == (10, 4, 6)
    assert np.all((disc.A_bar > 0) & (disc.A_bar < 1))


def test_zoh_branches_agree_at_threshold():
    t = ZOH_SERIES_THRESHOLD
    for z in (t, -t, t * (1 - 1e-9), -t * (1 - 1e-9)):
        closed = np.expm1(z) / z
        np.testing.assert_allclose(zoh_phi(np.array(z)), closed, atol=1e-9)


def test_zoh_phi_grad_matches_difference_quotient():
    z = np.array([-3.0, -0.5, -5e-3, 0.0, 5e-3, 0.7])
    h = 1e-6
    numeric = (zoh_phi(z + h) - zoh_phi(z - h)) / (2 * h)
    np.testing.assert_allclose(zoh_phi_grad(z), numeric, atol=1e-7)


# =============================================================================
# Scans
# =============================================================================


def test_sequential_scan_example():
    y = scan_sequential(_scalar_ssm(0.5, 0.5), np.array([[1.0], [0.0], [0.0]]))
    np.testing.assert_allclose(y[:, 0], [0.5, 0.25, 0.125])


def test_zero_input_with_zero_state_gives_zero():
    y = scan_sequential(_scalar_ssm(0.9, 1.0), np.zeros((5, 1)))
    np.testing.assert_array_equal(y, 0.0)


def test_initial_state_decays():
    y = scan_sequential(_scalar_ssm(0.5, 1.0), np.zeros((3, 1)), h0=np.array([[1.0]]))
    np.testing.assert_allclose(y[:, 0], [0.5, 0.25, 0.125])
    y_par = scan_parallel(_scalar_ssm(0.5, 1.0), np.zeros((3, 1)), h0=np.array([[1.0]]))
    np.testing.assert_allclose(y_par, y)


def test_empty_sequence_rejected():
    with pytest.raises(ShapeError):
        scan_parallel(_scalar_ssm(0.5, 0.5), np.zeros((0, 1)))


def test_step_count_mismatch_rejected():
    disc = SsmDiscrete(A_bar=np.full((4, 1, 1), 0.5), B_bar=np.ones((4, 1, 1)), C=np.ones(1))
    with pytest.raises(ShapeError):
        scan_sequential(disc, np.ones((3, 1)))


def test_combine_is_associative(rng):
    p1, p2, p3 = [(rng.uniform(0, 1, 5), rng.normal(size=5)) for _ in range(3)]
    left = combine(p3, combine(p2, p1))
    right = combine(combine(p3, p2), p1)
    np.testing.assert_allclose(left[0], right[0])
    np.testing.assert_allclose(left[1], right[1])


@settings(max_examples=40, deadline=None)
@given(
    length=st.integers(1, 128),
    state=st.integers(1, 16),
    lanes=st.integers(1, 3),
    chunk=st.one_of(st.none(), st.integers(1, 40)),
    seed=st.integers(0, 2**31 - 1),
)
def test_parallel_scan_matches_sequential(length, state, lanes, chunk, seed):
    rng = np.random.default_rng(seed)
    cont = SsmContinuous(
        A=-rng.uniform(0.1, 4.0, size=(lanes, state)),
        B=rng.normal(size=(length, lanes, state)),
        C=rng.normal(size=(length, lanes, state)),
    )
    disc = discretize_zoh(cont, rng.uniform(1e-3, 0.5, size=(length, lanes)))
    x = rng.normal(size=(length, lanes))
    expected = scan_sequential(disc, x)
    np.testing.assert_allclose(scan_parallel(disc, x, chunk_size=chunk), expected, atol=1e-10)

    disc32 = SsmDiscrete(*(p.astype(np.float32) for p in (disc.A_bar, disc.B_bar, disc.C)))
    y32 = scan_parallel(disc32, x.astype(np.float32), chunk_size=chunk)
    np.testing.assert_allclose(y32, expected, atol=1e-5 * max(1.0, np.abs(expected).max()))


def test_chunked_prefix_matches_rollout(rng):
    a = rng.uniform(0.2, 1.0, size=(2, 37, 3, 4))
    b = rng.normal(size=(2, 37, 3, 4))
    np.testing.assert_allclose(prefix_parallel(a, b, chunk_size=5), prefix_sequential(a, b))


def test_chunk_size_below_one_rejected():
    with pytest.raises(ConfigError):
        prefix_parallel(np.ones((4, 1, 1)), np.ones((4, 1, 1)), chunk_size=0)


def test_kernel_example():
    kernel = kernel_conv(_scalar_ssm(0.5, 0.5), 3)
    np.testing.assert_allclose(kernel[:, 0], [0.5, 0.25, 0.125])


def test_memoryless_kernel_has_single_tap():
    kernel = kernel_conv(_scalar_ssm(0.0, 0.7), 4)
    np.testing.assert_allclose(kernel[:, 0], [0.7, 0.0, 0.0, 0.0])


def test_kernel_convolution_matches_recurrence(rng):
    cont = SsmContinuous(
        A=-rng.uniform(0.1, 3.0, size=(3, 5)), B=rng.normal(size=5), C=rng.normal(size=5)
    )
    disc = discretize_zoh(cont, np.full((1, 3), 0.2))
    x = rng.normal(size=(32, 3))
    y_conv = causal_conv(x, kernel_conv(disc, 32))
    np.testing.assert_allclose(y_conv, scan_sequential(disc, x), atol=1e-5)


def test_kernel_rejects_step_varying_parameters(rng):
    cont = SsmContinuous.initial(lanes=2, state=3)
    disc = discretize_zoh(cont, rng.uniform(0.01, 0.1, size=(6, 2)))
    with pytest.raises(ConfigError):
        kernel_conv(disc, 6)


def test_long_sequence_stays_bounded(rng):
    length = 10_000
    a_max, b_max = 0.99, 0.01
    disc = SsmDiscrete(
        A_bar=rng.uniform(0.5, a_max, size=(length, 2, 4)),
        B_bar=rng.uniform(0.0, b_max, size=(length, 2, 4)),
        C=np.ones(4),
    )
    x = rng.uniform(-1.0, 1.0, size=(length, 2))
    y = scan_parallel(disc, x)
    assert np.all(np.isfinite(y))
    bound = 4 * b_max * 1.0 / (1 - a_max)
    assert np.abs(y).max() <= bound + 1e-9


# =============================================================================
# Selective SSM
# =============================================================================


def test_constant_parameters_degenerate_to_plain_scan(rng):
    with precision(np.float64):
        d, n, length = 3, 4, 9
        A = -rng.uniform(0.5, 2.0, size=(d, n))
        b_row = rng.normal(size=n)
        c_row = rng.normal(size=n)
        x = rng.normal(size=(1, length, d))
        delta = np.full((1, length, d), 0.3)
        Bm = np.tile(b_row, (1, length, 1))
        Cm = np.tile(c_row, (1, length, 1))
        y = selective_scan(Tensor(x), Tensor(delta), Tensor(A), Tensor(Bm), Tensor(Cm)).data

        disc = discretize_zoh(SsmContinuous(A=A, B=b_row, C=c_row), np.full((1, d), 0.3))
        np.testing.assert_allclose(y[0], scan_sequential(disc, x[0]), atol=1e-12)


def test_selective_zero_input_gives_zero_output(rng):
    proj = SelectiveProjections(4, 4, 2, rng=rng)
    ssm = SelectiveSsm(4, 4, 2, rng=rng)
    y = selective_forward(proj, ssm.A, Tensor(np.zeros((2, 6, 4))))
    np.testing.assert_array_equal(y.data, 0.0)


def test_selective_paths_agree(rng):
    ssm = SelectiveSsm(5, 3, 2, rng=rng)
    x = Tensor(rng.normal(size=(2, 20, 5)))
    par = ssm(x, path="parallel").data
    seq = ssm(x, path="sequential").data
    np.testing.assert_allclose(par, seq, atol=1e-5)


def test_selective_projection_shapes(rng):
    proj = SelectiveProjections(6, 4, 2, rng=rng)
    delta, Bm, Cm = proj(Tensor(rng.normal(size=(2, 7, 6))))
    assert delta.shape == (2, 7, 6)
    assert Bm.shape == Cm.shape == (2, 7, 4)
    assert np.all(delta.data > 0)


def test_selective_gradients_reach_every_parameter(rng):
    with precision(np.float64):
        ssm = SelectiveSsm(4, 4, 2, rng=np.random.default_rng(3))
        x = parameter(rng.normal(size=(1, 8, 4)))
        w = rng.normal(size=(1, 8, 4))

        def loss():
            return (ssm(x) * w).sum()

        inputs = [x] + ssm.parameters()
        assert gradcheck(loss, inputs, tol=1e-5)


def test_selective_scan_gradient_with_chunking(rng):
    with precision(np.float64):
        x = parameter(rng.normal(size=(1, 11, 2)))
        delta = parameter(rng.uniform(0.05, 0.5, size=(1, 11, 2)))
        A = parameter(-rng.uniform(0.5, 2.0, size=(2, 3)))
        Bm = parameter(rng.normal(size=(1, 11, 3)))
        Cm = parameter(rng.normal(size=(1, 11, 3)))
        w = rng.normal(size=(1, 11, 2))
        assert gradcheck(
            lambda: (selective_scan(x, delta, A, Bm, Cm, chunk_size=4) * w).sum(),
            [x, delta, A, Bm, Cm],
            tol=1e-5,
        )


def test_ssm_width_mismatch(rng):
    with pytest.raises(ShapeError):
        SelectiveSsm(4, 2, 1, rng=rng)(Tensor(np.zeros((1, 3, 5))))
