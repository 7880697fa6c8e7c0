import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from conftest import make_draw
from ramdpm.core import (
    AttemptRecord,
    ClusterParams,
    ContractError,
    Dataset,
    DomainError,
    Layout,
    ModelConfig,
    StandardizationRecord,
    cluster_kernel,
    conditional_outcome_weights,
    covariate_mixture_weights,
    log_likelihood,
    normalize_attempts,
    pattern_mixture_weights,
    quatro_merge_map,
    read_csv,
    standardize,
    stick_break,
    write_csv,
)


# --- stick breaking --------------------------------------------------------


@pytest.mark.parametrize("v, expected", [
    ([1.0], [1.0]),
    ([0.5, 1.0], [0.5, 0.5]),
    ([0.2, 0.5, 1.0], [0.2, 0.4, 0.4]),
])
def test_stick_break_examples(v, expected):
    np.testing.assert_allclose(stick_break(v), expected, atol=1e-15)


def test_stick_break_errors():
    with pytest.raises(DomainError):
        stick_break([1.2, 1.0])
    with pytest.raises(DomainError):
        stick_break([-0.1, 1.0])
    with pytest.raises(ContractError):
        stick_break([0.3, 0.9])


@given(arrays(float, st.integers(1, 60), elements=st.floats(0, 1)))
def test_stick_break_sums_to_one(head):
    v = np.append(head, 1.0)
    pi = stick_break(v)
    assert abs(pi.sum() - 1.0) <= 1e-12
    assert (pi >= 0).all()


# --- kernels ---------------------------------------------------------------


def degenerate_params(K=9, L=3):
    return ClusterParams(alpha=np.zeros((2, K)), beta=np.zeros(L - 1), sigma2=1.0,
                         xi=np.full(K + 1, 1 / (K + 1)), eta_cat=np.full(L, 1 / L), p_z=0.5)


def test_cluster_kernel_degenerate_value():
    K, L = 9, 3
    cfg = ModelConfig(K=K)
    k = cluster_kernel(AttemptRecord(y=0.0, r=1, x_cat=1, x_cont=None, z=1), degenerate_params(K, L), cfg)
    expected = stats.norm.pdf(0) * (1 / (K + 1)) * (1 / L) * 0.5
    assert k == pytest.approx(expected, rel=1e-12)


def test_cluster_kernel_missing_outcome_drops_factor():
    K, L = 9, 3
    cfg = ModelConfig(K=K)
    p = degenerate_params(K, L)
    k = cluster_kernel(AttemptRecord(y=None, r=10, x_cat=2, z=0), p, cfg)
    assert k == pytest.approx((1 / (K + 1)) * (1 / L) * 0.5, rel=1e-12)


def test_cluster_kernel_arm_symmetry():
    cfg = ModelConfig(K=9)
    p = degenerate_params()
    a = cluster_kernel(AttemptRecord(y=0.3, r=2, x_cat=1, z=0), p, cfg)
    b = cluster_kernel(AttemptRecord(y=0.3, r=2, x_cat=1, z=1), p, cfg)
    assert a == pytest.approx(b, rel=1e-14)


def test_cluster_kernel_rejects_bad_attempt():
    with pytest.raises(DomainError):
        cluster_kernel(AttemptRecord(y=None, r=11), degenerate_params(), ModelConfig(K=9))


@settings(max_examples=50)
@given(y=st.floats(-3, 3), x=st.floats(-2, 2), r=st.integers(1, 3), z=st.integers(0, 1),
       s2=st.floats(0.2, 3), bx=st.floats(-2, 2), m=st.floats(-1, 1), t2=st.floats(0.2, 2))
def test_cluster_kernel_log_matches_direct_product(y, x, r, z, s2, bx, m, t2):
    K = 3
    merge = (1, 2, 2, 3)
    layout = Layout(K=K, merge_map=merge, L=2, has_cont=True)
    alpha = np.array([[0.1, -0.4], [0.7, 0.2]])
    xi = np.array([0.4, 0.3, 0.2, 0.1])
    eta = np.array([0.35, 0.65])
    p = ClusterParams(alpha=alpha, beta=np.array([bx, 0.3]), sigma2=s2, xi=xi, eta_cat=eta, m=m, tau2=t2, p_z=0.3)
    rec = AttemptRecord(y=y, r=r, x_cat=2, x_cont=x, z=z)
    mean = alpha[z, merge[r - 1] - 1] + bx * x + 0.3
    direct = (stats.norm.pdf(y, mean, math.sqrt(s2)) * xi[r - 1] * eta[1]
              * stats.norm.pdf(x, m, math.sqrt(t2)) * (0.3 if z else 0.7))
    assert cluster_kernel(rec, p, layout, log=True) == pytest.approx(math.log(direct), abs=1e-9)


# --- mixture weights -------------------------------------------------------


def test_weights_single_component():
    d = make_draw(alpha=[[[0.0, 0.0], [0.0, 0.0]]], xi=[[0.3, 0.3, 0.4]], has_cont=True)
    np.testing.assert_allclose(conditional_outcome_weights(1, 1, 0.2, 0, d), [1.0])
    np.testing.assert_allclose(covariate_mixture_weights(1, 0.2, 1, d), [1.0])
    np.testing.assert_allclose(pattern_mixture_weights(0, 2, d), [1.0])


def test_weights_equal_pi_when_factors_shared():
    d = make_draw(alpha=np.zeros((2, 2, 2)), xi=[[0.3, 0.3, 0.4]] * 2, v=[0.3, 1.0], has_cont=True)
    np.testing.assert_allclose(conditional_outcome_weights(2, 1, 0.5, 1, d), [0.3, 0.7], atol=1e-14)
    np.testing.assert_allclose(covariate_mixture_weights(1, -0.5, 0, d), [0.3, 0.7], atol=1e-14)
    np.testing.assert_allclose(pattern_mixture_weights(1, 3, d), [0.3, 0.7], atol=1e-14)


def test_weights_brute_force(two_component_draw):
    d = two_component_draw
    c = d.clusters
    pi = d.sticks.pi
    x, z, r = 0.25, 1, 2
    px = stats.norm.pdf(x, c.m, np.sqrt(c.tau2)) * np.where(z == 1, c.p_z, 1 - c.p_z)
    cov = pi * px
    np.testing.assert_allclose(covariate_mixture_weights(1, x, z, d), cov / cov.sum(), rtol=1e-12)
    full = cov * c.xi[:, r - 1]
    np.testing.assert_allclose(conditional_outcome_weights(r, 1, x, z, d), full / full.sum(), rtol=1e-12)
    pat = pi * c.p_z * c.xi[:, r - 1]
    np.testing.assert_allclose(pattern_mixture_weights(z, r, d), pat / pat.sum(), rtol=1e-12)


def test_weights_survive_underflow():
    d = make_draw(alpha=np.zeros((2, 2, 1)), xi=[[0.5, 0.5]] * 2, m=[0.0, 50.0], tau2=[1e-3, 1e-3], has_cont=True)
    w = covariate_mixture_weights(1, 25.1, 0, d)   # both densities underflow in linear space
    assert np.isfinite(w).all() and w[1] == pytest.approx(1.0)


def test_weights_invalid_attempt(two_component_draw):
    with pytest.raises(DomainError):
        conditional_outcome_weights(4, 1, 0.0, 0, two_component_draw)


@settings(max_examples=40)
@given(st.floats(0.05, 0.95), st.floats(-2, 2), st.integers(0, 1), st.integers(1, 3))
def test_weights_are_simplexes(v0, x, z, r):
    d = make_draw(alpha=np.zeros((2, 2, 2)), xi=[[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]], v=[v0, 1.0],
                  m=[-0.3, 0.6], tau2=[0.4, 0.8], p_z=[0.3, 0.7], has_cont=True)
    for w in (conditional_outcome_weights(r, 1, x, z, d), covariate_mixture_weights(1, x, z, d),
              pattern_mixture_weights(z, r, d)):
        assert abs(w.sum() - 1) < 1e-12 and (w >= 0).all()


def test_mixture_identity_on_grid(two_component_draw):
    """sum_h pi_h k_h(y, r, x, z), integrated over y, equals p(r, x, z) and
    factors into that marginal times the weighted conditional density."""
    d = two_component_draw
    c = d.clusters
    r, x, z = 2, 0.3, 1
    lay = d.layout
    ygrid = np.linspace(-15, 15, 30001)
    joint = np.zeros_like(ygrid)
    for h in range(d.H):
        p = c[h]
        joint += d.sticks.pi[h] * np.array([
            cluster_kernel(AttemptRecord(y=None, r=r, x_cat=1, x_cont=x, z=z), p, lay)
        ]) * stats.norm.pdf(ygrid, p.alpha[z, r - 1] + p.beta[0] * x, math.sqrt(p.sigma2))
    marg = sum(d.sticks.pi[h] * cluster_kernel(AttemptRecord(y=None, r=r, x_cat=1, x_cont=x, z=z), c[h], lay)
               for h in range(d.H))
    assert np.trapezoid(joint, ygrid) == pytest.approx(marg, abs=1e-6)
    w = conditional_outcome_weights(r, 1, x, z, d)
    cond = sum(w[h] * stats.norm.pdf(ygrid, c.alpha[h, z, r - 1] + c.beta[h, 0] * x, math.sqrt(c.sigma2[h]))
               for h in range(d.H))
    np.testing.assert_allclose(joint, marg * cond, atol=1e-6)


def test_weights_invariant_to_pi_scaling(two_component_draw):
    """Unnormalized weights scaled by a constant give the same simplex."""
    d = two_component_draw
    base = conditional_outcome_weights(1, 1, 0.1, 0, d)
    logw = d.log_pi + np.log(d.clusters.xi[:, 0])
    from ramdpm.core import _normalize_log_weights, log_covariate_arm
    logw = logw + log_covariate_arm(d, 1, 0.1, 0)[0]
    np.testing.assert_allclose(_normalize_log_weights(logw + math.log(7.5)), base, rtol=1e-12)


# --- datasets --------------------------------------------------------------


def test_normalize_attempts_examples():
    nan = float("nan")
    data = Dataset.from_arrays(y=[nan, 41.3, nan], r=[4, 2, 10], z=[0, 1, 0], K=9)
    out = normalize_attempts(data)
    assert out.r.tolist() == [10, 2, 10]
    assert out.y[1] == 41.3


@given(st.lists(st.tuples(st.booleans(), st.integers(1, 10)), min_size=1, max_size=40))
def test_normalize_attempts_idempotent(rows):
    y = [1.0 if obs and r <= 9 else float("nan") for obs, r in rows]
    data = Dataset.from_arrays(y=y, r=[r for _, r in rows], z=[0] * len(rows), K=9)
    once = normalize_attempts(data)
    twice = normalize_attempts(once)
    assert once.r.tolist() == twice.r.tolist()
    assert (np.isnan(once.y) == (once.r == 10)).all()


def test_dataset_validation():
    with pytest.raises(DomainError):
        Dataset.from_arrays(y=[1.0], r=[11], z=[0], K=9)
    with pytest.raises(DomainError):
        Dataset.from_arrays(y=[1.0], r=[1], z=[2], K=9)


def test_csv_round_trip(tmp_path):
    nan = float("nan")
    data = Dataset.from_arrays(y=[1.5, nan, -2.25], r=[1, 10, 3], z=[0, 1, 1], K=9,
                               x_cont=[0.1, nan, 2.0], x_cat=[1, 2, 2])
    path = tmp_path / "d.csv"
    write_csv(data, path)
    assert path.read_text().splitlines()[0] == "y,r,x_cat,x_cont,z"
    back = read_csv(path, K=9)
    np.testing.assert_array_equal(back.y, data.y)
    np.testing.assert_array_equal(back.x_cont, data.x_cont)
    assert back.r.tolist() == data.r.tolist() and back.L == 2


# --- standardization -------------------------------------------------------


def test_standardize_two_points():
    data = Dataset.from_arrays(y=[1.0, 3.0], r=[1, 1], z=[0, 1], K=9)
    std, rec = standardize(data)
    np.testing.assert_allclose(std.y, [-1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)
    assert rec.y_scale == pytest.approx(math.sqrt(2))


def test_standardize_fixed_point():
    y = np.array([-1.0, 1.0]) / math.sqrt(2)
    std, _ = standardize(Dataset.from_arrays(y=y, r=[1, 1], z=[0, 1], K=9))
    np.testing.assert_allclose(std.y, y, atol=1e-10)


def test_standardize_moments_and_constant_column():
    rng = np.random.default_rng(3)
    data = Dataset.from_arrays(y=rng.normal(30, 4, 200), r=np.ones(200, int), z=rng.integers(0, 2, 200), K=9,
                               x_cont=rng.normal(2, 0.5, 200))
    std, _ = standardize(data)
    for col in (std.y, std.x_cont):
        assert abs(col.mean()) < 1e-12 and col.var() == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(DomainError):
        standardize(Dataset.from_arrays(y=[2.0, 2.0, 2.0], r=[1, 1, 1], z=[0, 1, 0], K=9))


@given(arrays(float, st.integers(2, 50), elements=st.floats(-1e4, 1e4)))
def test_standardize_round_trip(y):
    if np.ptp(y) < 1e-6 * max(1.0, np.abs(y).max()):
        return
    data = Dataset.from_arrays(y=y, r=np.ones(len(y), int), z=np.zeros(len(y), int), K=9)
    std, rec = standardize(data)
    np.testing.assert_allclose(rec.y_inverse(std.y), y, rtol=1e-10, atol=1e-10 * np.abs(y).max())


def test_standardization_record_serialization():
    rec = StandardizationRecord(1.0, 2.0, 3.0, 4.0)
    assert StandardizationRecord.from_dict(rec.to_dict()) == rec


# --- config ----------------------------------------------------------------


def test_quatro_merge_map():
    assert quatro_merge_map(9) == (1, 2, 3, 3, 3, 3, 3, 3, 3, 4)
    cfg = ModelConfig(K=9, merge_map=quatro_merge_map(9))
    assert cfg.K_cond == 3 and cfg.merge(7) == 3 and cfg.merge(10) == 4


@pytest.mark.parametrize("mm", [(1, 2, 2, 2), (1, 3, 2, 4), (2, 2, 3, 4), (1, 2, 3, 3)])
def test_bad_merge_maps(mm):
    with pytest.raises(ContractError):
        ModelConfig(K=3, merge_map=mm)


def test_schedule_validation():
    with pytest.raises(ContractError):
        ModelConfig(n_iter=10, n_burn=10)
    with pytest.raises(ContractError):
        ModelConfig(thin=0)
    assert ModelConfig(n_iter=10, n_burn=5, thin=5).n_retained == 1


def test_cluster_params_invariants():
    with pytest.raises(DomainError):
        ClusterParams(alpha=np.zeros((2, 1)), beta=np.zeros(0), sigma2=0.0, xi=np.array([1.0]), eta_cat=np.array([1.0]))
    with pytest.raises(DomainError):
        ClusterParams(alpha=np.zeros((2, 1)), beta=np.zeros(0), sigma2=1.0, xi=np.array([0.5, 0.6]),
                      eta_cat=np.array([1.0]))


def test_log_likelihood_label_invariance(two_component_draw):
    rng = np.random.default_rng(0)
    n = 30
    y = rng.normal(size=n)
    r = rng.integers(1, 4, n)
    y[r == 3] = np.nan
    x = rng.normal(size=n)
    x[:4] = np.nan
    data = Dataset.from_arrays(y=y, r=r, z=rng.integers(0, 2, n), K=2, x_cont=x)
    d = two_component_draw
    assert log_likelihood(data, d) == pytest.approx(log_likelihood(data, d.permute([1, 0])), rel=1e-12)
