from __future__ import annotations
import math

import numpy as np
import pandas as pd
import pytest

from src.analysis import (
    BetaBound,
    CouplingReport,
    age_column,
    age_distance_frame,
    build_coupled_run,
    coupling_row,
    limit_curve,
    simulate_limit_copies,
    theoretical_beta,
)
from src.errors import HypothesisError
from src.experiments import replica_seed
from src.model import IntensityFn, KernelSpec


@pytest.mark.parametrize("n", [8, 64])
def test_constant_intensity_couples_exactly(constant_model, n):
    curve = limit_curve(constant_model, 3.0, 0.01)
    events = 0
    for r in range(16):
        coupled = build_coupled_run(constant_model, n, 3.0, seed=replica_seed(4, n, r), curve=curve)
        assert coupled.regime == "H1"
        events += coupled.particle.total_events
        np.testing.assert_array_equal(coupled.delta_counts(), 0)
        np.testing.assert_array_equal(coupled.age_gaps(), 0.0)
    assert events > 0


def test_single_particle_without_kernel_couples_exactly(model_factory):
    model = model_factory(kernel=KernelSpec(family="zero"), psi=IntensityFn(phi="affine", mu=1.5, a=2.0))
    coupled = build_coupled_run(model, 1, 4.0, seed=2, dx=0.01)
    assert coupled.regime == "H2"
    assert coupled.delta_counts().tolist() == [0]


def test_mismatch_count_bounds(refractory_model):
    coupled = build_coupled_run(refractory_model, 16, 3.0, seed=11, dx=0.01)
    deltas = coupled.delta_counts()
    assert np.all(coupled.delta_counts(1.0) <= coupled.delta_counts(2.0))
    assert np.all(coupled.delta_counts(2.0) <= deltas)
    # paths whose ages differ have at least one unmatched event
    assert np.mean(coupled.age_gaps() > 0) <= deltas.mean()
    bound = -min(p.last_past for p in coupled.particle.paths) + 3.0
    assert np.all(coupled.age_gaps() <= bound)


def test_coupled_run_is_deterministic(linear_model):
    curve = limit_curve(linear_model, 2.0, 0.01)
    a = build_coupled_run(linear_model, 16, 2.0, seed=8, curve=curve)
    b = build_coupled_run(linear_model, 16, 2.0, seed=8, curve=curve)
    assert a.regime == "H2"
    np.testing.assert_array_equal(a.delta_counts(), b.delta_counts())
    assert [p.events for p in a.limit_paths] == [p.events for p in b.limit_paths]
    assert [p.past for p in a.limit_paths] == [p.past for p in a.particle.paths]


@pytest.mark.parametrize("theta, dx", [(1.0, 0.3), (5.0, 0.0033)])
def test_coupled_run_with_step_not_dividing_horizon(refractory_model, linear_model, theta, dx):
    for model in (refractory_model, linear_model):
        curve = limit_curve(model, theta, dx)
        assert curve.horizon >= theta
        coupled = build_coupled_run(model, 4, theta, seed=1, curve=curve)
        assert len(coupled.limit_paths) == 4
        assert all(t <= theta for p in coupled.limit_paths for t in p.events)


def test_coupled_run_rejects_unsupported_model(model_factory):
    model = model_factory(psi=IntensityFn(phi="affine", mu=1.0, a=1.0, delta=0.1))
    with pytest.raises(HypothesisError, match="outside both"):
        build_coupled_run(model, 4, 1.0, seed=0)


def test_coupling_row(refractory_model):
    curve = limit_curve(refractory_model, 2.0, 0.01, snapshot_times=(1.0,))
    coupled = build_coupled_run(refractory_model, 32, 2.0, seed=3, curve=curve)
    row = coupling_row(coupled, curve, age_times=(1.0, 1.5), replica=5)
    assert row["n"] == 32 and row["replica"] == 5
    assert row["delta_n"] == pytest.approx(coupled.delta_counts().mean())
    assert 0.0 <= row["p_differ"] <= 1.0
    assert age_column(1.0) in row
    assert age_column(1.5) not in row
    assert row[age_column(1.0)] >= 0.0


def test_age_distance_frame(refractory_model):
    curve = limit_curve(refractory_model, 2.0, 0.01, snapshot_times=(1.0, 2.0))
    copies = simulate_limit_copies(refractory_model, curve, 2000, 2.0, seed=6)
    frame = age_distance_frame(copies, curve, (1.0, 2.0))
    assert list(frame.columns) == ["t", "count", "w1", "w1_tilde"]
    assert (frame["count"] == 2000).all()
    assert (frame["w1"] <= 0.1).all()
    assert (frame["w1_tilde"] <= 0.15).all()


# -- theoretical bound ---------------------------------------------------------


def test_beta_is_zero_without_interaction(constant_model):
    bound = theoretical_beta(constant_model, 5.0)
    assert bound.value == 0.0 and bound.beta == 0.0


def test_beta_age_independent_regime(linear_model):
    bound = theoretical_beta(linear_model, 2.0)
    assert bound.regime == "H2"
    # Lip / (1 - 1/4) * (sqrt(1/8) sqrt(4/3) + (1/4)(4/3))
    assert bound.beta == pytest.approx(0.988776, abs=1e-6)
    assert bound.value == pytest.approx(2.0 * bound.beta)
    assert bound.parts["lambda_sup"] == pytest.approx(4 / 3)


def test_beta_bounded_regime_has_a_horizon(refractory_model):
    late = theoretical_beta(refractory_model, 5.0)
    assert late.value is None
    assert "theta" in late.reason
    assert late.parts["theta_max"] == pytest.approx(0.375)

    early = theoretical_beta(refractory_model, 0.1)
    assert early.regime == "H1"
    m1, m2 = 0.25, math.sqrt(0.25 / 4.0)
    expected = 1.0 / (1.0 - (0.25 + 2.0 * 0.1)) * (m2 * math.sqrt(2.0) + math.sqrt(3.0) * m1 * 2.0)
    assert early.beta == pytest.approx(expected, rel=1e-9)


def test_beta_needs_a_contraction(model_factory):
    model = model_factory(
        kernel=KernelSpec(family="exponential", alpha=2.0, beta=1.0),
        psi=IntensityFn(phi="affine", mu=1.0, a=1.0),
    )
    bound = theoretical_beta(model, 1.0)
    assert bound.value is None
    assert "alpha" in bound.reason


# -- report ------------------------------------------------------------------------


def _report(beta_value=None):
    rows = []
    for n in (8, 16, 32, 64):
        for r, jitter in enumerate((0.9, 1.1)):
            rows.append({"n": n, "replica": r, "delta_n": jitter * 2.0 / math.sqrt(n), "age_gap": 0.1})
    beta = BetaBound(beta_value, None if beta_value is None else beta_value / 2.0, "H2" if beta_value else None)
    return CouplingReport(rows=pd.DataFrame(rows), beta=beta, assumptions={"H1": False, "H2": True})


def test_report_fit_and_summary():
    report = _report(beta_value=10.0)
    fit = report.fit()
    assert fit.slope == pytest.approx(-0.5)
    summary = report.summary()
    assert summary["slope"] == pytest.approx(-0.5)
    assert summary["beta_theta_bound"] == 10.0
    assert summary["beta_regime"] == "H2"
    assert summary["underpowered"] == []
    assert len(summary["per_n"]) == 4
    assert all(c["ok"] for c in summary["bound_check"])


def test_report_without_bound_or_fit():
    report = _report()
    assert report.bound_check() == []
    small = CouplingReport(rows=report.rows[report.rows["n"] <= 16], beta=report.beta, assumptions={})
    assert small.fit() is None
    assert small.summary()["slope"] is None
