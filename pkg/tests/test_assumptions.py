from __future__ import annotations

import pytest

from src.assumptions import (
    ASSUMPTIONS,
    NOT_CHECKABLE,
    SATISFIED,
    VIOLATED,
    require_regime,
    validate_config,
    validate_model,
)
from src.config import ExperimentConfig
from src.errors import HypothesisError
from src.model import InitialLaw, IntensityFn, KernelSpec, PastInfluenceLaw


def test_bounded_refractory_model_is_h1(refractory_model):
    report = validate_model(refractory_model, 5.0)
    assert set(report.status) == set(ASSUMPTIONS)
    assert report.h1 and not report.h2
    assert report.status["psi_age_independent"] == VIOLATED
    assert require_regime(report) == "H1"


def test_affine_model_is_h2(linear_model):
    report = validate_model(linear_model, 5.0)
    assert report.h2 and not report.h1
    assert report.status["psi_bounded"] == VIOLATED
    assert report.status["initial_bounded"] == VIOLATED
    assert require_regime(report) == "H2"


def test_both_regimes_pick_h1(model_factory):
    model = model_factory(
        kernel=KernelSpec(family="exponential", alpha=1.0, beta=2.0),
        psi=IntensityFn(phi="sigmoid", scale=2.0, gain=1.0),
        initial=InitialLaw(age0="uniform", upper=2.0),
    )
    report = validate_model(model, 2.0)
    assert report.h1 and report.h2
    assert report.status["initial_bounded"] == SATISFIED
    assert require_regime(report) == "H1"


@pytest.mark.parametrize("m_t0, expected", [(1.0, VIOLATED), (3.0, SATISFIED), (None, SATISFIED)])
def test_declared_initial_age_bound(model_factory, m_t0, expected):
    model = model_factory(initial=InitialLaw(age0="uniform", upper=2.0, m_t0=m_t0))
    report = validate_model(model, 2.0)
    assert report.status["initial_bounded"] == expected
    if m_t0 is not None:
        assert "m_t0" in report.notes["initial_bounded"]


def test_dirac_initial_age_falls_back_to_h2(model_factory):
    model = model_factory(
        kernel=KernelSpec(family="exponential", alpha=1.0, beta=2.0),
        psi=IntensityFn(phi="sigmoid", scale=2.0, gain=1.0),
        initial=InitialLaw(age0="dirac", a0=0.5),
    )
    report = validate_model(model, 2.0)
    assert report.status["initial_density"] == VIOLATED
    assert require_regime(report) == "H2"


def test_unbounded_age_dependent_psi_is_outside_both(model_factory):
    model = model_factory(
        kernel=KernelSpec(family="exponential", alpha=1.0, beta=2.0),
        psi=IntensityFn(phi="affine", mu=1.0, a=1.0, delta=0.2),
    )
    report = validate_model(model, 2.0)
    assert report.regime() is None
    assert report.well_posed
    with pytest.raises(HypothesisError, match="outside both"):
        require_regime(report)


def test_piecewise_kernel_with_stimulus_is_not_checkable(model_factory):
    model = model_factory(
        kernel=KernelSpec(family="piecewise_constant", breakpoints=(1.0,), values=(1.0,)),
        psi=IntensityFn(phi="clipped_affine", mu=0.5, a=1.0, cap=2.0),
        past=PastInfluenceLaw(mode="common_stimulus", tau=-0.5),
    )
    report = validate_model(model, 2.0)
    assert report.status["past_variance"] == NOT_CHECKABLE
    assert not report.coupling_base
    with pytest.raises(HypothesisError, match="past_variance"):
        require_regime(report)


def test_report_exports(refractory_model):
    report = validate_config(ExperimentConfig(model=refractory_model, theta=2.0))
    frame = report.frame()
    assert list(frame.columns) == ["assumption", "status", "note"]
    assert len(frame) == len(ASSUMPTIONS)
    data = report.as_dict()
    assert data["H1"] is True and data["H2"] is False
    assert "delta=0.1" in data["notes"]["psi_age_independent"]
