"""Conditioned-chain (Q-process) tests: transitions, moments, gradients."""

import numpy as np
import pytest

from psdbp.errors import ModelMisspecificationError, ParameterDomainError, SpectralIntegrityError
from psdbp.kernel import SpectralTriple, TruncatedKernel, build_kernel, spectral
from psdbp.models import OffspringModel
from psdbp.qprocess import (
    CurveCache,
    _require_extinction_path,
    grad_m_up,
    m_up,
    m_up_curve,
    m_up_vector,
    q_transition,
    sigma2_up,
)
from psdbp.simulate import SimConfig, simulate_batch

TWO_STATE = TruncatedKernel(2, np.array([[0.5, 0.25], [0.25, 0.5]]), "lump-top", np.zeros(2))
BH_GEO = OffspringModel("bh", "geometric")
RICKER_GEO = OffspringModel("ricker", "geometric")


@pytest.fixture(scope="module")
def two_state_qp():
    return q_transition(spectral(TWO_STATE), TWO_STATE)


def test_two_state_transition_matrix(two_state_qp):
    np.testing.assert_allclose(
        two_state_qp.q_up, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-12
    )
    np.testing.assert_allclose(two_state_qp.stationary, [0.5, 0.5], atol=1e-12)


def test_scalar_kernel_q_process():
    kernel = TruncatedKernel(1, np.array([[0.37]]), "lump-top", np.zeros(1))
    qp = q_transition(spectral(kernel), kernel)
    np.testing.assert_allclose(qp.q_up, [[1.0]], atol=1e-14)
    np.testing.assert_allclose(qp.stationary, [1.0], atol=1e-14)


def test_two_state_conditioned_moments(two_state_qp):
    assert m_up(two_state_qp, 1) == pytest.approx(4 / 3, abs=1e-12)
    assert m_up(two_state_qp, 2) == pytest.approx(5 / 6, abs=1e-12)
    assert sigma2_up(two_state_qp, 1) == pytest.approx(2 / 9, abs=1e-12)
    with pytest.raises(ParameterDomainError):
        m_up(two_state_qp, 3)


def test_two_state_stationary_mean_preserved(two_state_qp):
    pi = two_state_qp.stationary
    states = np.arange(1.0, 3.0)
    one_step = pi @ (states * m_up_vector(two_state_qp))
    assert one_step == pytest.approx(pi @ states, abs=1e-10)


def test_q_transition_requires_positive_v():
    bad = SpectralTriple(0.75, np.array([0.5, 0.5]), np.array([1.0, 0.0]), (0, 0))
    with pytest.raises(SpectralIntegrityError):
        q_transition(bad, TWO_STATE)


def test_q_process_invariants_on_built_kernels():
    for model, th, z in [(BH_GEO, (40.0, 2.0), 320), (RICKER_GEO, (40.0, 2.0), 320)]:
        kernel = build_kernel(model, th, z)
        qp = q_transition(spectral(kernel), kernel)
        np.testing.assert_allclose(qp.q_up.sum(axis=1), 1.0, atol=1e-10)
        assert qp.stationary.sum() == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(
            qp.stationary @ qp.q_up, qp.stationary, atol=1e-8
        )


def test_stationary_concentrates_near_capacity():
    kernel = build_kernel(BH_GEO, (40.0, 2.0), 320)
    qp = q_transition(spectral(kernel), kernel)
    assert 30 <= int(np.argmax(qp.stationary)) + 1 <= 50


def test_degenerate_chain_without_extinction_is_flagged():
    identity = TruncatedKernel(3, np.eye(3), "lump-top", np.zeros(3))
    with pytest.raises(ModelMisspecificationError):
        _require_extinction_path(identity)
    # built-in families always retain an extinction path
    _require_extinction_path(build_kernel(BH_GEO, (40.0, 2.0), 64))


def test_conditioning_lifts_the_mean_at_capacity():
    curve = m_up_curve(RICKER_GEO, (40.0, 2.0), 320)
    assert curve[39] > 1.0
    raw = np.asarray(RICKER_GEO.mean(np.arange(1.0, 321.0), (40.0, 2.0)))
    gaps = curve[:10] - raw[:10]
    assert np.all(gaps > 0.0)
    assert gaps[9] < gaps[0]  # conditioning effect fades with size


def test_m_up_matches_conditioned_simulation():
    # one-step empirical means of survivors approximate the conditioned mean
    model = OffspringModel("bh", "geometric")
    th = (10.0, 2.0)
    cache = CurveCache()
    entry = cache.entry(model, th, 80)
    cfg = SimConfig(initial_size=8, horizon=16, replications=40000, seed=11,
                    condition_on_survival=False)
    kept = [t for t in simulate_batch(cfg, model, th) if t.states[-1] > 0]
    first = np.array([t.states[1] for t in kept], dtype=float)
    est = first.mean() / 8.0
    se = first.std(ddof=1) / 8.0 / np.sqrt(len(kept))
    assert abs(est - entry.m_up[7]) < 5 * se


def test_conditioned_transitions_match_q_process_rows():
    model = OffspringModel("bh", "geometric")
    th = (10.0, 2.0)
    kernel = build_kernel(model, th, 80)
    qp = q_transition(spectral(kernel), kernel)
    cfg = SimConfig(initial_size=8, horizon=20, replications=100000, seed=11,
                    condition_on_survival=False)
    kept = [t for t in simulate_batch(cfg, model, th) if t.states[-1] > 0]
    firsts = np.array([t.states[1] for t in kept])
    emp = np.bincount(firsts, minlength=81)[1:81] / len(kept)
    tv = 0.5 * np.abs(emp - qp.q_up[7]).sum()
    assert tv < 0.025  # Monte Carlo floor at this replication count


def test_curve_cache_memoizes_and_upgrades():
    cache = CurveCache()
    th = (40.0, 2.0)
    light = cache.entry(BH_GEO, th, 128)
    assert light.stationary is None
    again = cache.entry(BH_GEO, th, 128)
    assert again is light
    full = cache.entry(BH_GEO, th, 128, need_left=True)
    assert full.stationary is not None
    np.testing.assert_array_equal(full.m_up, light.m_up)  # right data bit-stable
    assert cache.entry(BH_GEO, th, 128) is full


def test_curve_stable_under_truncation_doubling():
    lo = m_up_curve(BH_GEO, (40.0, 2.0), 320)
    hi = m_up_curve(BH_GEO, (40.0, 2.0), 640)
    assert np.abs(lo[:100] - hi[:100]).max() < 1e-10


def test_gradient_sign_and_step_halving():
    th = np.array([40.0, 2.0])
    cache = CurveCache()
    g_h = grad_m_up(BH_GEO, th, 160, h=np.array([0.2, 0.02]), cache=cache)
    g_h2 = grad_m_up(BH_GEO, th, 160, h=np.array([0.1, 0.01]), cache=cache)
    g_ref = grad_m_up(BH_GEO, th, 160, h=np.array([1e-3, 1e-4]), cache=cache)
    # central differences converge at second order: error shrinks ~4x
    err_h = np.abs(g_h - g_ref).max()
    err_h2 = np.abs(g_h2 - g_ref).max()
    assert err_h / err_h2 == pytest.approx(4.0, rel=0.35)
    # raising K raises local growth near capacity
    assert g_ref[39, 0] > 0.0


def test_gradient_of_theta_independent_curve_is_zero():
    # finite differences of a flat function vanish identically
    cache = CurveCache()
    th = np.array([40.0, 2.0])
    h = np.array([1e-4, 1e-6])
    lo = cache.entry(BH_GEO, th, 64).m_up

    class Flat:
        def validate_theta(self, theta):
            return np.asarray(theta, dtype=float)

        def cache_key(self):
            return ("flat",)

    flat_cache = CurveCache()
    flat_cache._entries = {}

    def fake_entry(model, theta, z_max, need_left=False):
        from psdbp.qprocess import CurveEntry
        return CurveEntry(64, lo, lo * 0, None, 0.9, None, np.ones(64))

    flat_cache.entry = fake_entry
    g = grad_m_up(Flat(), th, 64, h=h, cache=flat_cache)
    assert np.abs(g).max() < 1e-6


def test_gradient_domain_guard():
    with pytest.raises(ParameterDomainError):
        grad_m_up(BH_GEO, np.array([40.0, 1.00005]), 64, h=np.array([1e-4, 1e-3]))
