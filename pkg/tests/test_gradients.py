"""bval/bvec parsing and gradient-scheme invariants."""

import numpy as np
import pytest

from cordscan.errors import InvalidScheme, LengthMismatch, NonNumericToken
from cordscan.gradients import (DIRECTIONS_30, GradientScheme, protocol_scheme,
                                read_scheme, write_scheme)


def test_direction_table_is_unit_and_well_spread():
    norms = np.linalg.norm(DIRECTIONS_30, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)
    # worst-case angular separation (antipodal metric) should be decent
    dots = np.abs(DIRECTIONS_30 @ DIRECTIONS_30.T)
    np.fill_diagonal(dots, 0.0)
    assert np.degrees(np.arccos(dots.max())) > 10.0


def test_protocol_scheme_layout():
    s = protocol_scheme()
    assert len(s) == 96
    assert int(s.b0_mask.sum()) == 6
    assert int((s.bvals == 900.0).sum()) == 90
    assert s.n_distinct_directions() == 30


def test_minimal_scheme_from_files(tmp_path):
    bval = tmp_path / "bval"
    bvec = tmp_path / "bvec"
    bvals = [0.0] * 6 + [900.0] * 30
    vecs = np.vstack([np.zeros((6, 3)), 2.5 * DIRECTIONS_30])  # non-unit on purpose
    bval.write_text(" ".join(str(b) for b in bvals) + "\n")
    bvec.write_text("\n".join(" ".join(f"{v:.8f}" for v in vecs[:, i]) for i in range(3)))
    s = read_scheme(bval, bvec)
    assert len(s) == 36
    assert int((s.bvals == 900.0).sum()) == 30
    np.testing.assert_allclose(np.linalg.norm(s.bvecs[s.dwi_mask], axis=1), 1.0,
                               atol=1e-12)


def test_small_bvalues_become_zero(tmp_path):
    bval = tmp_path / "bval"
    bvec = tmp_path / "bvec"
    bval.write_text("5 9.9 900\n")
    bvec.write_text("0 0 1\n0 0 0\n0 0 0\n")
    s = read_scheme(bval, bvec)
    assert list(s.bvals) == [0.0, 0.0, 900.0]


def test_zero_direction_allowed_at_b0_only(tmp_path):
    bval = tmp_path / "bval"
    bvec = tmp_path / "bvec"
    bval.write_text("0 900\n")
    bvec.write_text("0 1\n0 0\n0 0\n")
    s = read_scheme(bval, bvec)
    np.testing.assert_array_equal(s.bvecs[0], [0.0, 0.0, 0.0])

    bval.write_text("0 900\n")
    bvec.write_text("0 0\n0 0\n0 0\n")
    with pytest.raises(InvalidScheme):
        read_scheme(bval, bvec)


def test_length_mismatch(tmp_path):
    bval = tmp_path / "bval"
    bvec = tmp_path / "bvec"
    bval.write_text(" ".join(["0"] * 6 + ["900"] * 30))
    cols = 35
    bvec.write_text("\n".join(" ".join("0.5" for _ in range(cols)) for _ in range(3)))
    with pytest.raises(LengthMismatch):
        read_scheme(bval, bvec)


def test_non_numeric_token(tmp_path):
    bval = tmp_path / "bval"
    bvec = tmp_path / "bvec"
    bval.write_text("0 banana 900")
    bvec.write_text("0 0 1\n0 0 0\n1 1 0\n")
    with pytest.raises(NonNumericToken):
        read_scheme(bval, bvec)


def test_scheme_requires_b0():
    with pytest.raises(InvalidScheme):
        GradientScheme(np.array([900.0]), np.array([[0.0, 0.0, 1.0]]))


def test_fuzzed_files_never_return_non_unit_directions(tmp_path):
    """Random parsable files: every b>0 direction comes back unit."""
    rng = np.random.default_rng(42)
    bval_p = tmp_path / "bval"
    bvec_p = tmp_path / "bvec"
    for trial in range(50):
        n = int(rng.integers(7, 40))
        bvals = rng.choice([0.0, 300.0, 900.0], size=n)
        bvals[rng.integers(0, n)] = 0.0
        scales = rng.uniform(0.1, 10.0, size=n)
        vecs = rng.normal(size=(n, 3))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        vecs *= scales[:, None]
        bval_p.write_text(" ".join(f"{b:g}" for b in bvals))
        bvec_p.write_text("\n".join(" ".join(f"{v:.6f}" for v in vecs[:, i])
                                    for i in range(3)))
        s = read_scheme(bval_p, bvec_p)
        dw = s.dwi_mask
        if dw.any():
            np.testing.assert_allclose(np.linalg.norm(s.bvecs[dw], axis=1), 1.0,
                                       atol=1e-6)


def test_write_read_round_trip(tmp_path):
    s = protocol_scheme()
    write_scheme(s, tmp_path / "bval", tmp_path / "bvec")
    back = read_scheme(tmp_path / "bval", tmp_path / "bvec")
    np.testing.assert_array_equal(back.bvals, s.bvals)
    np.testing.assert_allclose(back.bvecs, s.bvecs, atol=1e-9)
