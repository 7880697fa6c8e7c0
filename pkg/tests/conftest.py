import numpy as np
import pytest

from ramdpm.core import (
    IDENTITY_STANDARDIZATION,
    Components,
    Layout,
    PosteriorDraw,
    StandardizationRecord,
    StickWeights,
    identity_merge_map,
)


def make_draw(alpha, xi, *, v=None, beta=None, sigma2=None, eta_cat=None, m=None, tau2=None, p_z=None,
              K=None, merge_map=None, has_cont=False, standardization=IDENTITY_STANDARDIZATION):
    """Hand-built posterior draw.  ``alpha`` is (H, 2, K_cond), ``xi`` is (H, K+1)."""
    alpha = np.asarray(alpha, dtype=float)
    xi = np.asarray(xi, dtype=float)
    H, _, Kc = alpha.shape
    K = xi.shape[1] - 1 if K is None else K
    merge_map = identity_merge_map(K) if merge_map is None else tuple(merge_map)
    eta_cat = np.ones((H, 1)) if eta_cat is None else np.asarray(eta_cat, dtype=float)
    L = eta_cat.shape[1]
    layout = Layout(K=K, merge_map=merge_map, L=L, has_cont=has_cont)
    n_cov = layout.n_cov
    comps = Components(
        alpha=alpha,
        beta=np.zeros((H, n_cov)) if beta is None else np.asarray(beta, dtype=float).reshape(H, n_cov),
        sigma2=np.ones(H) if sigma2 is None else np.asarray(sigma2, dtype=float),
        xi=xi,
        eta_cat=eta_cat,
        m=np.zeros(H) if m is None else np.asarray(m, dtype=float),
        tau2=np.ones(H) if tau2 is None else np.asarray(tau2, dtype=float),
        p_z=np.full(H, 0.5) if p_z is None else np.asarray(p_z, dtype=float),
    )
    if v is None:
        v = np.ones(H)
        v[:-1] = 1.0 / np.arange(H, 1, -1)  # equal weights
    return PosteriorDraw(StickWeights(np.asarray(v, dtype=float)), comps, layout, standardization)


@pytest.fixture
def degenerate_draw():
    """H=1, K=2, alpha^(z,1)=1, alpha^(z,2)=2, beta=0."""
    def build(xi, **kw):
        return make_draw(alpha=[[[1.0, 2.0], [1.0, 2.0]]], xi=[xi], **kw)
    return build


@pytest.fixture
def two_component_draw():
    return make_draw(
        alpha=[[[0.0, 1.0], [0.5, 2.0]], [[-1.0, 0.3], [1.5, -0.2]]],
        xi=[[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]],
        v=[0.4, 1.0],
        beta=[[0.7], [-0.4]],
        sigma2=[1.0, 0.5],
        m=[-0.3, 0.6],
        tau2=[0.4, 0.8],
        p_z=[0.3, 0.7],
        has_cont=True,
    )


@pytest.fixture
def std_record():
    return StandardizationRecord(y_center=20.0, y_scale=3.0, x_center=2.0, x_scale=0.5)


# --- acceptance report -----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Record one pass/fail line per acceptance criterion."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
