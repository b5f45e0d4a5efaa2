"""Apply a voxel-wise model fit over a masked volume.

Per-voxel fits are pure and independent; parallel execution chunks the
masked voxel list and reassembles by index, so output is bitwise
identical for any thread count.
"""

from __future__ import annotations

import concurrent.futures
import os

import numpy as np

from cordscan.ballstick import (FitConfig, canonical_hemisphere, check_directions,
                                fit_ballstick_voxel, normalize_attenuation)
from cordscan.dti import design_matrix, dti_metrics, fit_dti_voxel
from cordscan.errors import DimensionMismatch, NonPositiveS0
from cordscan.gradients import GradientScheme
from cordscan.volume import Volume

# flags volume encoding (bitwise)
FLAG_NOT_CONVERGED = 1
FLAG_DEGENERATE = 2
FLAG_SKIPPED = 4  # voxel could not be fit (e.g. non-positive s0)

DTI_METRIC_NAMES = ("fa", "md", "ad", "rd")
BALLSTICK_METRIC_NAMES = ("fww", "stick_ad", "nx", "ny", "nz")


def _fit_chunk_dti(signals, scheme, X):
    out = np.zeros((signals.shape[0], 4))
    rss = np.zeros(signals.shape[0])
    flags = np.zeros(signals.shape[0], dtype=np.int32)
    for i in range(signals.shape[0]):
        tensor, diag = fit_dti_voxel(signals[i], scheme, X=X)
        m = dti_metrics(tensor)
        out[i] = (m.fa, m.md, m.ad, m.rd)
        rss[i] = diag.rss
        if not diag.converged:
            flags[i] |= FLAG_NOT_CONVERGED
    return out, rss, flags


def _fit_chunk_ballstick(signals, scheme, X, cfg):
    out = np.zeros((signals.shape[0], 5))
    rss = np.zeros(signals.shape[0])
    flags = np.zeros(signals.shape[0], dtype=np.int32)
    for i in range(signals.shape[0]):
        try:
            norm, _ = normalize_attenuation(signals[i], scheme)
        except NonPositiveS0:
            flags[i] |= FLAG_SKIPPED
            continue
        params, diag = fit_ballstick_voxel(norm, scheme, cfg,
                                           dti_design=X, skip_checks=True)
        n = canonical_hemisphere(params.n)
        out[i] = (params.f, params.d, n[0], n[1], n[2])
        rss[i] = diag.rss
        if not diag.converged:
            flags[i] |= FLAG_NOT_CONVERGED
        if diag.degenerate:
            flags[i] |= FLAG_DEGENERATE
    return out, rss, flags


def _run_chunks(func, args, signals, n_chunks, threads):
    bounds = np.linspace(0, signals.shape[0], n_chunks + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if threads <= 1 or len(chunks) <= 1:
        return [func(signals[a:b], *args) for a, b in chunks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(func, signals[a:b], *args) for a, b in chunks]
        return [f.result() for f in futures]


def fit_volume(dwi: Volume, scheme: GradientScheme, mask: Volume,
               model: str, cfg: FitConfig | None = None,
               threads: int | None = None) -> dict[str, Volume]:
    """Fit `model` ('dti' or 'ballstick') in every mask voxel.

    Returns metric maps plus 'rss' and 'flags' volumes on the DWI grid;
    voxels outside the mask are zero.
    """
    if cfg is None:
        cfg = FitConfig()
    if threads is None:
        threads = cfg.threads
    if threads is None or threads <= 0:
        threads = os.cpu_count() or 1
    if model not in ("dti", "ballstick"):
        raise ValueError(f"unknown model {model!r}")
    if dwi.data.ndim != 4:
        raise DimensionMismatch(f"DWI must be 4D, got {dwi.data.ndim}D")
    if mask.data.ndim != 3 or mask.spatial_dims != dwi.spatial_dims:
        raise DimensionMismatch(
            f"mask dims {mask.data.shape} != DWI spatial dims {dwi.spatial_dims}")
    if dwi.data.shape[3] != len(scheme):
        raise DimensionMismatch(
            f"DWI has {dwi.data.shape[3]} measurements, scheme has {len(scheme)}")

    X = design_matrix(scheme)
    if model == "ballstick":
        check_directions(scheme)

    mask_idx = np.flatnonzero(np.asarray(mask.data) > 0)
    names = DTI_METRIC_NAMES if model == "dti" else BALLSTICK_METRIC_NAMES
    shape = dwi.spatial_dims
    maps = {name: np.zeros(shape) for name in names}
    maps["rss"] = np.zeros(shape)
    maps["flags"] = np.zeros(shape)
    if mask_idx.size == 0:
        return {name: mask.like(arr) for name, arr in maps.items()}

    flat = np.ascontiguousarray(
        dwi.data.reshape(-1, dwi.data.shape[3])[mask_idx].astype(np.float64))
    if model == "dti":
        func, args = _fit_chunk_dti, (scheme, X)
    else:
        func, args = _fit_chunk_ballstick, (scheme, X, cfg)

    n_chunks = 1 if threads <= 1 else 4 * threads
    results = _run_chunks(func, args, flat, n_chunks, threads)
    values = np.vstack([r[0] for r in results])
    rss = np.concatenate([r[1] for r in results])
    flags = np.concatenate([r[2] for r in results])

    unravel = np.unravel_index(mask_idx, shape)
    for j, name in enumerate(names):
        maps[name][unravel] = values[:, j]
    maps["rss"][unravel] = rss
    maps["flags"][unravel] = flags.astype(np.float64)
    return {name: mask.like(arr) for name, arr in maps.items()}
