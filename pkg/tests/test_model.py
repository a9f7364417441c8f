from __future__ import annotations
import math

import numpy as np
import pytest
from scipy import integrate

from src.errors import DomainError
from src.model import (
    InitialLaw,
    IntensityFn,
    KernelSpec,
    PastInfluenceLaw,
    RandomKernelLaw,
    eval_intensity,
    eval_kernel,
    kernel_mean_and_envelope,
    sample_initial_past,
    sample_interaction_matrix,
)


def _quad(f, upper, points=None):
    val, _ = integrate.quad(f, 0.0, upper, points=points, limit=400)
    return val


# -- kernels -----------------------------------------------------------------


def test_exponential_kernel_norms():
    k = KernelSpec(family="exponential", alpha=1.5, beta=3.0)
    assert eval_kernel(k, 0.0) == pytest.approx(1.5)
    assert eval_kernel(k, 1.0) == pytest.approx(1.5 * math.exp(-3.0))
    assert k.l1_norm() == pytest.approx(0.5)
    assert k.envelope_l2() == pytest.approx(math.sqrt(_quad(lambda t: float(k(t)) ** 2, 40.0)), rel=1e-8)
    assert k.envelope_integral(2.0) == pytest.approx(_quad(lambda t: float(k(t)), 2.0), rel=1e-10)


def test_erlang_envelope_is_nonincreasing_hull():
    k = KernelSpec(family="erlang", alpha=-1.5, beta=2.0, order=3)
    t = np.linspace(0.0, 10.0, 2001)
    env = k.envelope(t)
    assert np.all(env >= np.abs(k(t)) - 1e-15)
    assert np.all(np.diff(env) <= 1e-15)
    mode = (k.order - 1) / k.beta
    assert k.envelope_l1() == pytest.approx(_quad(lambda s: float(k.envelope(s)), 60.0, [mode]), rel=1e-7)
    assert k.envelope_l2() == pytest.approx(
        math.sqrt(_quad(lambda s: float(k.envelope(s)) ** 2, 60.0, [mode])), rel=1e-7
    )
    assert k.l1_norm() == pytest.approx(1.5)


def test_piecewise_constant_kernel():
    k = KernelSpec(family="piecewise_constant", breakpoints=(1.0, 2.0, 3.0), values=(0.5, -2.0, 1.0))
    assert float(k(0.5)) == 0.5
    assert float(k(1.0)) == -2.0
    assert float(k(2.5)) == 1.0
    assert float(k(3.5)) == 0.0
    assert float(k.envelope(0.5)) == 2.0
    assert float(k.envelope(2.5)) == 1.0
    assert k.l1_norm() == pytest.approx(3.5)
    assert k.envelope_l1() == pytest.approx(5.0)
    assert k.envelope_integral(1.5) == pytest.approx(3.0)
    assert not k.is_continuous()


def test_kernel_rejects_bad_parameters():
    with pytest.raises(DomainError):
        KernelSpec(family="gaussian")
    with pytest.raises(DomainError):
        KernelSpec(family="piecewise_constant", breakpoints=(2.0, 1.0), values=(1.0, 1.0))
    with pytest.raises(DomainError):
        eval_kernel(KernelSpec(family="exponential", alpha=1.0, beta=1.0), -0.1)


def test_growing_exponential_envelope_is_flagged():
    k = KernelSpec(family="exponential", alpha=1.0, beta=-0.5)
    assert not k.is_envelope_nonincreasing()
    assert math.isfinite(k.envelope_integral(3.0))
    assert k.l1_norm() == math.inf


# -- random kernels --------------------------------------------------------------


def test_weight_law_moments():
    uni = RandomKernelLaw(law="uniform", a=-1.0, b=3.0)
    assert uni.mean_weight == pytest.approx(1.0)
    assert uni.weight_variance == pytest.approx(16.0 / 12.0)
    assert uni.w_max == 3.0
    ber = RandomKernelLaw(law="bernoulli", p=0.3, w=2.0)
    assert ber.mean_weight == pytest.approx(0.6)
    assert ber.second_moment == pytest.approx(1.2)

    w = uni.sample_weights(np.random.default_rng(3), 200_000)
    assert w.mean() == pytest.approx(1.0, abs=0.02)
    assert w.min() >= -1.0 and w.max() <= 3.0


def test_mean_and_envelope_of_random_kernel():
    law = RandomKernelLaw(base=KernelSpec(family="exponential", alpha=2.0, beta=1.0), law="uniform", a=-1.0, b=3.0)
    m, M = kernel_mean_and_envelope(law, 0.5)
    assert m == pytest.approx(2.0 * math.exp(-0.5))
    assert M == pytest.approx(6.0 * math.exp(-0.5))
    assert M >= abs(m)


def test_interaction_matrix():
    law = RandomKernelLaw(base=KernelSpec(family="exponential", alpha=1.0, beta=1.0), law="bernoulli", p=0.5)
    mat = sample_interaction_matrix(law, 6, 11, zero_self_interaction=True)
    assert mat.n == 6
    assert np.all(np.diag(mat.weights) == 0.0)
    assert set(np.unique(mat.weights)) <= {0.0, 1.0}
    again = sample_interaction_matrix(law, 6, 11, zero_self_interaction=True)
    np.testing.assert_array_equal(mat.weights, again.weights)
    with pytest.raises(DomainError):
        sample_interaction_matrix(law, 0, 1)


# -- initial condition ------------------------------------------------------------


def test_initial_laws():
    exp = InitialLaw(age0="exponential", rate=2.0)
    assert exp.laplace(1.0) == pytest.approx(exp.expect(lambda a: math.exp(-a)), rel=1e-8)
    assert exp.age_bound is None

    uni = InitialLaw(age0="uniform", upper=2.0)
    assert float(uni.density(1.0)) == 0.5
    assert float(uni.density(2.5)) == 0.0
    assert uni.age_bound == 2.0

    dirac = InitialLaw(age0="dirac", a0=0.3)
    assert not dirac.has_density
    with pytest.raises(DomainError):
        dirac.density(0.3)
    path = sample_initial_past(dirac, 0)
    assert path.past == (-0.3,)


# -- past influence ---------------------------------------------------------------


def test_hawkes_past_mean_closed_form_matches_quadrature():
    initial = InitialLaw(age0="exponential", rate=1.0)
    exp_law = RandomKernelLaw(base=KernelSpec(family="exponential", alpha=1.2, beta=2.0), w=0.5)
    # an order-1 erlang kernel is the same function but goes through quadrature
    erl_law = RandomKernelLaw(base=KernelSpec(family="erlang", alpha=0.6, beta=2.0, order=1), w=0.5)
    past = PastInfluenceLaw(mode="hawkes_past")
    t = np.array([0.0, 0.4, 1.3])
    closed = past.mean(t, exp_law, initial)
    np.testing.assert_allclose(closed, 0.5 * 1.2 * np.exp(-2.0 * t) / 3.0, rtol=1e-12)
    np.testing.assert_allclose(past.mean(t, erl_law, initial), closed, rtol=1e-7)
    np.testing.assert_allclose(past.variance(t, erl_law, initial), past.variance(t, exp_law, initial), rtol=1e-6)


def test_common_stimulus_has_no_variance_with_deterministic_weights():
    law = RandomKernelLaw(base=KernelSpec(family="exponential", alpha=1.0, beta=1.0), w=2.0)
    past = PastInfluenceLaw(mode="common_stimulus", tau=-0.5)
    initial = InitialLaw()
    np.testing.assert_allclose(past.mean([0.0, 1.0], law, initial), 2.0 * np.exp(-np.array([0.5, 1.5])))
    np.testing.assert_allclose(past.variance([0.0, 1.0], law, initial), 0.0, atol=1e-15)
    with pytest.raises(DomainError):
        PastInfluenceLaw(mode="common_stimulus", tau=0.5)


def test_piecewise_kernel_past_mean_continuity():
    base = KernelSpec(family="piecewise_constant", breakpoints=(1.0,), values=(1.0,))
    assert PastInfluenceLaw(mode="hawkes_past").mean_is_continuous(base, InitialLaw())
    assert not PastInfluenceLaw(mode="common_stimulus", tau=-0.2).mean_is_continuous(base, InitialLaw())


# -- intensity --------------------------------------------------------------------


def test_intensity_functions():
    aff = IntensityFn(phi="affine", mu=1.0, a=1.0)
    assert aff.rate(0.3, 2.0) == pytest.approx(3.0)
    assert aff.rate(0.3, -5.0) == 0.0
    assert aff.lip == 1.0 and not aff.is_bounded

    clipped = IntensityFn(phi="clipped_affine", mu=0.5, a=1.0, cap=2.0, delta=0.1)
    assert clipped.rate(0.05, 1.0) == 0.0
    assert clipped.rate(0.1, 1.0) == pytest.approx(1.5)
    assert clipped.rate(0.5, 10.0) == 2.0
    assert clipped.sup_bound == 2.0 and not clipped.age_independent

    sig = IntensityFn(phi="sigmoid", scale=3.0, gain=2.0, center=0.5)
    assert sig.lip == pytest.approx(1.5)
    for x in (-40.0, -1.0, 0.5, 3.0, 40.0):
        assert sig.rate(1.0, x) == pytest.approx(float(sig(1.0, x)), rel=1e-12)
    assert eval_intensity(sig, 0.0, 0.5) == pytest.approx(1.5)

    with pytest.raises(DomainError):
        IntensityFn(phi="constant", c=-1.0)
    with pytest.raises(DomainError):
        eval_intensity(sig, -1.0, 0.0)


@pytest.mark.parametrize(
    "psi",
    [
        IntensityFn(phi="affine", mu=0.5, a=-2.0),
        IntensityFn(phi="clipped_affine", mu=0.5, a=1.0, cap=2.0, delta=0.1),
        IntensityFn(phi="sigmoid", scale=2.0, gain=3.0, center=1.0),
    ],
)
def test_dominating_rate_bounds_intensity(psi):
    rng = np.random.default_rng(5)
    s = rng.uniform(0, 2, 500)
    x = rng.normal(0, 3, 500)
    assert np.all(psi(s, x) <= psi.dominating_rate(np.abs(x)) + 1e-12)


@pytest.mark.parametrize(
    "psi",
    [
        IntensityFn(phi="affine", mu=1.0, a=1.0),
        IntensityFn(phi="affine", mu=0.5, a=-2.0, delta=0.3),
        IntensityFn(phi="clipped_affine", mu=0.5, a=1.0, cap=2.0, delta=0.1),
        IntensityFn(phi="sigmoid", scale=2.0, gain=3.0, center=1.0),
        IntensityFn(phi="constant", c=0.7, delta=0.2),
    ],
)
def test_intensity_is_lipschitz_and_bounded(psi):
    rng = np.random.default_rng(17)
    s = rng.uniform(0, 2, 1000)
    x = rng.normal(0, 5, 1000)
    y = rng.normal(0, 5, 1000)
    gap = np.abs(psi(s, x) - psi(s, y))
    assert np.all(gap <= psi.lip * np.abs(x - y) + 1e-12)
    values = psi(s, x)
    assert np.all(values >= 0.0)
    assert np.all(values <= psi.sup_bound)


@pytest.mark.parametrize(
    "kernel",
    [
        KernelSpec(family="exponential", alpha=-1.5, beta=2.0),
        KernelSpec(family="erlang", alpha=2.0, beta=3.0, order=3),
        KernelSpec(family="piecewise_constant", breakpoints=(0.5, 1.0, 2.5), values=(0.2, -1.0, 0.4)),
    ],
)
def test_kernel_stays_under_its_envelope(kernel):
    t = np.random.default_rng(23).uniform(0, 5, 1000)
    assert np.all(np.abs(kernel(t)) <= kernel.envelope(t) + 1e-12)
