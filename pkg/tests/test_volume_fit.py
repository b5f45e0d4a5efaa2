"""Masked volume-wise fitting: correctness, masking, determinism."""

import numpy as np
import pytest

from cordscan.ballstick import BallStickParams, predict_ballstick
from cordscan.errors import DimensionMismatch
from cordscan.gradients import protocol_scheme
from cordscan.volume import Volume
from cordscan.volume_fit import fit_volume


def _toy_dataset(shape=(6, 5, 4)):
    scheme = protocol_scheme()
    rng = np.random.default_rng(9)
    dwi = np.zeros(shape + (len(scheme),))
    truth = np.zeros(shape + (5,))
    mask = np.zeros(shape, dtype=np.uint8)
    for idx in np.ndindex(shape):
        if rng.uniform() < 0.5:
            continue
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        p = BallStickParams(f=rng.uniform(0.08, 0.5),
                            d=rng.uniform(0.6e-3, 2.2e-3), n=n)
        dwi[idx] = 1000.0 * predict_ballstick(p, scheme)
        truth[idx] = (p.f, p.d, *n)
        mask[idx] = 1
    geom = dict(voxel_size=(2.0, 2.0, 2.0), affine=np.diag([2.0, 2.0, 2.0, 1.0]))
    return (Volume(dwi, **geom), scheme, Volume(mask, **geom),
            truth, mask.astype(bool))


def test_ballstick_volume_recovers_truth():
    dwi, scheme, mask, truth, inmask = _toy_dataset()
    maps = fit_volume(dwi, scheme, mask, "ballstick", threads=1)
    assert set(maps) == {"fww", "stick_ad", "nx", "ny", "nz", "rss", "flags"}
    fww = np.asarray(maps["fww"].data)
    stick = np.asarray(maps["stick_ad"].data)
    np.testing.assert_allclose(fww[inmask], truth[inmask][:, 0], atol=1e-9)
    np.testing.assert_allclose(stick[inmask], truth[inmask][:, 1], rtol=1e-8)
    n_fit = np.stack([np.asarray(maps[c].data)[inmask] for c in ("nx", "ny", "nz")],
                     axis=1)
    dots = np.abs(np.sum(n_fit * truth[inmask][:, 2:], axis=1))
    assert np.degrees(np.arccos(np.clip(dots, -1, 1))).max() < 0.1
    assert np.all(fww[~inmask] == 0.0)


def test_dti_volume_outside_mask_zero():
    dwi, scheme, mask, _, inmask = _toy_dataset()
    maps = fit_volume(dwi, scheme, mask, "dti", threads=1)
    assert set(maps) == {"fa", "md", "ad", "rd", "rss", "flags"}
    fa = np.asarray(maps["fa"].data)
    assert np.all(fa[~inmask] == 0.0)
    assert np.all(fa[inmask] >= 0.0) and np.all(fa[inmask] <= 1.0)


def test_empty_mask_returns_zeros():
    dwi, scheme, mask, _, _ = _toy_dataset()
    empty = mask.like(np.zeros(mask.data.shape, dtype=np.uint8))
    maps = fit_volume(dwi, scheme, empty, "ballstick", threads=1)
    for vol in maps.values():
        assert not np.asarray(vol.data).any()


def test_dimension_mismatch():
    dwi, scheme, mask, _, _ = _toy_dataset()
    bad = Volume(np.ones((3, 3, 3), dtype=np.uint8), mask.voxel_size, mask.affine)
    with pytest.raises(DimensionMismatch):
        fit_volume(dwi, scheme, bad, "dti")


def test_parallel_output_bitwise_identical():
    dwi, scheme, mask, _, _ = _toy_dataset(shape=(8, 5, 4))
    serial = fit_volume(dwi, scheme, mask, "ballstick", threads=1)
    parallel = fit_volume(dwi, scheme, mask, "ballstick", threads=3)
    for name in serial:
        assert np.asarray(serial[name].data).tobytes() == \
            np.asarray(parallel[name].data).tobytes(), name
