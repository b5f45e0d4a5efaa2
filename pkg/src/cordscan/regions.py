"""Vertebral-level aggregation: WM-weighted metric means and lesion load."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from cordscan.cohort import CohortRow, CohortTable, METRICS
from cordscan.errors import (DimensionMismatch, EmptyRegion, MissingLesionMask)
from cordscan.phantom import LabelMap
from cordscan.volume import Volume

log = logging.getLogger("cordscan.regions")

# face connectivity: the conservative reading of "number of lesions"
_STRUCTURE_6 = ndimage.generate_binary_structure(3, 1)


@dataclass
class LevelSummary:
    subject: str
    level: int
    means: dict[str, float]
    wm_weight_sum: float
    voxel_count: int


@dataclass
class LesionStats:
    level: int
    lesion_count: int
    lesion_fraction: float


def aggregate_level(metric: Volume, labels: LabelMap, level: int,
                    binary_wm: bool = False) -> float:
    """WM-weighted mean of the metric over one vertebral level.

    binary_wm thresholds the WM weight at 0.5 instead of using it as a
    partial-volume weight.
    """
    if metric.spatial_dims != labels.levels.spatial_dims:
        raise DimensionMismatch(
            f"metric dims {metric.spatial_dims} != labels {labels.levels.spatial_dims}")
    sel = np.asarray(labels.levels.data) == level
    w = np.asarray(labels.wm_weight.data, dtype=np.float64)[sel]
    if binary_wm:
        w = (w > 0.5).astype(np.float64)
    total = w.sum()
    if total <= 0.0:
        raise EmptyRegion(f"level {level}: no white-matter weight")
    m = np.asarray(metric.data, dtype=np.float64)[sel]
    return float((w * m).sum() / total)


def lesion_stats(labels: LabelMap, level: int) -> LesionStats:
    """Connected lesion count (6-connectivity) and lesion volume fraction
    within one vertebral level."""
    if labels.lesion is None:
        raise MissingLesionMask("label map has no lesion volume")
    level_mask = np.asarray(labels.levels.data) == level
    level_voxels = int(level_mask.sum())
    if level_voxels == 0:
        raise EmptyRegion(f"level {level} absent from label volume")
    lesion = (np.asarray(labels.lesion.data) > 0) & level_mask
    count = int(ndimage.label(lesion, structure=_STRUCTURE_6)[1])
    return LesionStats(level=level, lesion_count=count,
                       lesion_fraction=float(lesion.sum()) / level_voxels)


def summarize_levels(subject: str, metric_maps: dict[str, Volume],
                     labels: LabelMap, levels=(2, 3, 4),
                     binary_wm: bool = False) -> list[LevelSummary]:
    """Aggregate every metric for the requested levels; levels with no WM
    weight are skipped with a warning rather than failing the run."""
    missing = [m for m in METRICS if m not in metric_maps]
    if missing:
        raise KeyError(f"metric maps missing {missing}")
    out = []
    for level in levels:
        sel = np.asarray(labels.levels.data) == level
        try:
            means = {m: aggregate_level(metric_maps[m], labels, level, binary_wm)
                     for m in METRICS}
        except EmptyRegion as exc:
            log.warning("subject %s: %s; level omitted", subject, exc)
            continue
        w = np.asarray(labels.wm_weight.data, dtype=np.float64)[sel]
        out.append(LevelSummary(subject=subject, level=int(level), means=means,
                                wm_weight_sum=float(w.sum()),
                                voxel_count=int(sel.sum())))
    return out


def build_cohort(summaries, groups: dict[str, str],
                 lesion_fractions: dict[tuple[str, int], float] | None = None
                 ) -> CohortTable:
    """Assemble the cohort table from level summaries.

    groups: subject id -> 'healthy' | 'patient'.
    lesion_fractions: (subject, level) -> fraction; healthy subjects and
    missing keys default to 0. Raises DuplicateRow on repeated
    (subject, level).
    """
    lesion_fractions = lesion_fractions or {}
    table = CohortTable()
    for s in summaries:
        group = groups[s.subject]
        frac = float(lesion_fractions.get((s.subject, s.level), 0.0)) \
            if group == "patient" else 0.0
        table.append(CohortRow(subject=s.subject, group=group, level=s.level,
                               values=dict(s.means), lesion_fraction=frac))
    return table
