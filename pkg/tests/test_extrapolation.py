import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ramdpm.core import ContractError, DomainError
from ramdpm.extrapolation import (
    STANDARD_PRIORS,
    ExtrapolationBounds,
    ExtrapolationPriorSpec,
    PriorKind,
    compute_bounds,
    draw_extrapolation_means,
    extrapolation_mean_expectation,
    sample_extrapolation_mean,
    triangular_ppf,
)

KINDS = ("pm", "unif", "tri1", "tri2")


@pytest.mark.parametrize("P, C", [(10, 0.4), (20, 0.8)])
def test_compute_bounds(P, C):
    b = compute_bounds([40, 38, 42], P)
    assert (b.alpha_min, b.alpha_max) == (38, 42)
    assert b.C == pytest.approx(C)


def test_compute_bounds_equal_means_and_errors():
    assert compute_bounds([3.0, 3.0], 20).C == 0
    with pytest.raises(ContractError):
        compute_bounds([], 10)
    with pytest.raises(DomainError):
        compute_bounds([1.0, np.nan], 10)


def test_point_mass_is_exact():
    rng = np.random.default_rng(0)
    b = ExtrapolationBounds(38.0, 42.0, 0.4)
    spec = ExtrapolationPriorSpec("pm")
    assert all(sample_extrapolation_mean(spec, b, rng) == 38.0 for _ in range(100))


@pytest.mark.parametrize("kind, offset", [("unif", 1 / 2), ("tri1", 2 / 3), ("tri2", 1 / 3)])
def test_prior_means(kind, offset):
    rng = np.random.default_rng(1)
    spec = ExtrapolationPriorSpec(kind, 10)
    x = draw_extrapolation_means(spec, 38.0, 0.4, rng, size=100_000)
    assert abs(x.mean() - (38.0 - offset * 0.4)) < 3 * x.std() / np.sqrt(len(x))
    assert extrapolation_mean_expectation(spec, 38.0, 0.4) == pytest.approx(38.0 - offset * 0.4)


def test_none_kind_cannot_be_sampled():
    with pytest.raises(ContractError):
        sample_extrapolation_mean(ExtrapolationPriorSpec("none"), ExtrapolationBounds(1, 2, 0.1),
                                  np.random.default_rng(0))


def test_negative_P_rejected():
    with pytest.raises(DomainError):
        ExtrapolationPriorSpec("unif", -5)


def test_unknown_kind_lists_allowed():
    with pytest.raises(ContractError, match="allowed: none, pm, unif, tri1, tri2"):
        ExtrapolationPriorSpec("beta", 10)


def test_labels_and_standard_rows():
    assert [p.label for p in STANDARD_PRIORS] == [
        "none", "pm", "unif_10", "unif_20", "tri1_10", "tri1_20", "tri2_10", "tri2_20"]
    assert ExtrapolationPriorSpec("point_mass").kind is PriorKind.POINT_MASS


@settings(max_examples=60)
@given(kind=st.sampled_from(KINDS), a=st.floats(-100, 100), C=st.floats(0, 50), seed=st.integers(0, 2**32 - 1))
def test_draws_stay_in_support(kind, a, C, seed):
    x = draw_extrapolation_means(ExtrapolationPriorSpec(kind, 10), a, C, np.random.default_rng(seed), size=200)
    assert (x >= a - C).all() and (x <= a).all()


@given(kind=st.sampled_from(KINDS), a=st.floats(-100, 100), seed=st.integers(0, 2**32 - 1))
def test_zero_width_collapses_to_alpha_min(kind, a, seed):
    x = draw_extrapolation_means(ExtrapolationPriorSpec(kind, 10), a, 0.0, np.random.default_rng(seed), size=50)
    assert (x == a).all()


def test_stochastic_ordering():
    rng = np.random.default_rng(2)
    n = 100_000
    grid = np.linspace(37.6, 38.0, 41)
    cdfs = {}
    for kind in KINDS:
        x = draw_extrapolation_means(ExtrapolationPriorSpec(kind, 10), 38.0, 0.4, rng, size=n)
        cdfs[kind] = (x[:, None] <= grid[None, :]).mean(axis=0)
    tol = 3 * np.sqrt(0.25 / n)
    # a stochastically smaller law has a larger CDF everywhere
    assert (cdfs["tri1"] >= cdfs["unif"] - tol).all()
    assert (cdfs["unif"] >= cdfs["tri2"] - tol).all()
    assert (cdfs["tri2"] >= cdfs["pm"] - tol).all()


def test_triangular_ppf_endpoints_and_cdf():
    u = np.linspace(0, 1, 11)
    x = triangular_ppf(u, 0.0, 1.0, 0.25)
    assert x[0] == 0 and x[-1] == 1
    cdf = np.where(x < 0.25, x ** 2 / 0.25, 1 - (1 - x) ** 2 / 0.75)
    np.testing.assert_allclose(cdf, u, atol=1e-12)


def test_vector_bounds_broadcast():
    rng = np.random.default_rng(3)
    a = np.array([1.0, 2.0, 3.0])
    C = np.array([0.0, 0.5, 1.0])
    x = draw_extrapolation_means(ExtrapolationPriorSpec("unif", 10), a, C, rng)
    assert x.shape == (3,) and x[0] == 1.0 and (x >= a - C).all() and (x <= a).all()
