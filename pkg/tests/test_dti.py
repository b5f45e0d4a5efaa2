"""Tensor forward model, log-linear fit, scalar metrics."""

import math

import numpy as np
import pytest

from cordscan.dti import (DiffusionTensor, dti_metrics, fit_dti_voxel,
                          predict_dti)
from cordscan.errors import RankDeficientDesign
from cordscan.gradients import GradientScheme, protocol_scheme


def _random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_isotropic_prediction_matches_exponential():
    scheme = protocol_scheme()
    t = DiffusionTensor.from_matrix(1e-3 * np.eye(3), s0=1.0)
    s = predict_dti(t, scheme)
    np.testing.assert_allclose(s[scheme.dwi_mask], math.exp(-0.9), rtol=1e-12)
    np.testing.assert_allclose(s[scheme.b0_mask], 1.0, rtol=0)


def test_prediction_along_principal_axis():
    bvals = np.array([0.0, 900.0])
    bvecs = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    scheme = GradientScheme(bvals, bvecs)
    t = DiffusionTensor.from_matrix(np.diag([1.7e-3, 0.3e-3, 0.3e-3]), s0=1.0)
    s = predict_dti(t, scheme)
    assert s[0] == 1.0
    np.testing.assert_allclose(s[1], math.exp(-1.53), rtol=1e-12)


def test_b0_returns_s0():
    scheme = protocol_scheme()
    t = DiffusionTensor.from_matrix(np.diag([2e-3, 1e-3, 5e-4]), s0=123.5)
    s = predict_dti(t, scheme)
    np.testing.assert_allclose(s[scheme.b0_mask], 123.5, rtol=1e-15)


def test_noise_free_round_trip_recovers_tensor():
    scheme = protocol_scheme()
    D = np.diag([1.7e-3, 0.3e-3, 0.3e-3])
    truth = DiffusionTensor.from_matrix(D, s0=1000.0)
    fitted, diag = fit_dti_voxel(predict_dti(truth, scheme), scheme)
    np.testing.assert_allclose(fitted.components, truth.components,
                               rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(fitted.s0, 1000.0, rtol=1e-9)
    assert diag.converged


def test_round_trip_random_tensors():
    scheme = protocol_scheme()
    rng = np.random.default_rng(11)
    for _ in range(50):
        R = _random_rotation(rng)
        lams = np.sort(rng.uniform(0.2e-3, 2.5e-3, size=3))[::-1]
        D = R @ np.diag(lams) @ R.T
        truth = DiffusionTensor.from_matrix(D, s0=rng.uniform(100, 2000))
        fitted, _ = fit_dti_voxel(predict_dti(truth, scheme), scheme)
        w_t = np.sort(np.linalg.eigvalsh(truth.matrix()))
        w_f = np.sort(np.linalg.eigvalsh(fitted.matrix()))
        np.testing.assert_allclose(w_f, w_t, rtol=1e-9)


def test_isotropic_signals_give_zero_fa():
    scheme = protocol_scheme()
    signals = np.exp(-scheme.bvals * 1e-3)
    fitted, _ = fit_dti_voxel(signals, scheme)
    m = dti_metrics(fitted)
    assert m.fa < 1e-9
    np.testing.assert_allclose([m.md, m.ad, m.rd], 1e-3, rtol=1e-9)


def test_coplanar_directions_rank_deficient():
    angles = np.linspace(0, np.pi, 6, endpoint=False)
    vecs = np.column_stack([np.cos(angles), np.sin(angles), np.zeros(6)])
    scheme = GradientScheme(np.array([0.0] + [900.0] * 6),
                            np.vstack([[0, 0, 0], vecs]))
    with pytest.raises(RankDeficientDesign):
        fit_dti_voxel(np.ones(7), scheme)


def test_metrics_frozen_values():
    # directly evaluated from the eigenvalue formulas
    t = DiffusionTensor.from_matrix(np.diag([1.7e-3, 0.3e-3, 0.3e-3]))
    m = dti_metrics(t)
    np.testing.assert_allclose(m.ad, 1.7e-3, rtol=0)
    np.testing.assert_allclose(m.rd, 0.3e-3, rtol=0)
    np.testing.assert_allclose(m.md, 0.76666666666666666e-3, rtol=1e-15)
    np.testing.assert_allclose(m.fa, 0.79902220374948940, rtol=1e-12)
    np.testing.assert_allclose(np.abs(m.e1), [1.0, 0.0, 0.0], atol=1e-12)


def test_metrics_isotropic():
    t = DiffusionTensor.from_matrix(1e-3 * np.eye(3))
    m = dti_metrics(t)
    assert m.fa == 0.0
    assert m.md == m.ad == m.rd == pytest.approx(1e-3, rel=1e-15)


def test_metrics_rotation_invariant():
    rng = np.random.default_rng(5)
    D0 = np.diag([1.9e-3, 0.7e-3, 0.2e-3])
    base = dti_metrics(DiffusionTensor.from_matrix(D0))
    for _ in range(100):
        R = _random_rotation(rng)
        m = dti_metrics(DiffusionTensor.from_matrix(R @ D0 @ R.T))
        np.testing.assert_allclose(
            [m.fa, m.md, m.ad, m.rd],
            [base.fa, base.md, base.ad, base.rd], rtol=1e-12)


def test_md_identity_exact():
    rng = np.random.default_rng(6)
    for _ in range(100):
        R = _random_rotation(rng)
        lams = rng.uniform(0.1e-3, 3e-3, size=3)
        m = dti_metrics(DiffusionTensor.from_matrix(R @ np.diag(lams) @ R.T))
        assert m.md == (m.ad + 2.0 * m.rd) / 3.0  # bitwise, by construction
        assert m.ad >= m.md >= m.rd
        assert 0.0 <= m.fa <= 1.0


def test_negative_signals_clamped_not_fatal():
    scheme = protocol_scheme()
    rng = np.random.default_rng(7)
    signals = np.exp(-scheme.bvals * 1e-3) + rng.normal(0, 0.5, size=len(scheme))
    fitted, _ = fit_dti_voxel(signals, scheme)
    m = dti_metrics(fitted)
    assert np.isfinite([m.fa, m.md, m.ad, m.rd]).all()
    assert m.rd >= 1e-9  # eigenvalue floor
