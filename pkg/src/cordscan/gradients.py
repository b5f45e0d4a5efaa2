"""Gradient tables: b-values, unit directions, FSL bval/bvec I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cordscan.errors import InvalidScheme, LengthMismatch, NonNumericToken

# Below this the entry is treated as b=0: scanners emit small nonzero
# values for nominal b=0 measurements.
B0_THRESHOLD = 10.0  # s/mm^2

# 30 directions minimizing antipodal electrostatic energy on the sphere,
# stored in the z>=0 hemisphere. Precomputed once and frozen.
DIRECTIONS_30 = np.array([
    (+0.0980380265, +0.1217900117, +0.9877022519),
    (-0.3078113617, -0.1030470017, +0.9458506653),
    (+0.0428829973, -0.4078226976, +0.9120535597),
    (+0.4432341737, -0.1718257590, +0.8797837097),
    (-0.3331096948, +0.3645171320, +0.8695775938),
    (+0.1230420664, +0.5502882318, +0.8258592567),
    (+0.5388012216, +0.2846698329, +0.7928785089),
    (-0.4248125831, -0.5160367470, +0.7438012806),
    (-0.6867858973, -0.0321975711, +0.7261462991),
    (+0.4470982559, -0.5958840790, +0.6671021766),
    (-0.0145151541, -0.7705693114, +0.6371909028),
    (+0.7849116034, -0.1669717674, +0.5966860178),
    (-0.3314955253, +0.7425582177, +0.5819948540),
    (-0.6951059917, +0.4371368809, +0.5707354971),
    (+0.5555871307, +0.6613215395, +0.5039610715),
    (+0.1226130861, +0.8552469232, +0.5035064363),
    (-0.7852404859, -0.4283569285, +0.4471104127),
    (+0.8506563436, +0.2955800393, +0.4347599630),
    (-0.4912900065, -0.7918276078, +0.3628266377),
    (-0.9358198474, +0.0475718526, +0.3492536787),
    (+0.7605218072, -0.5699137433, +0.3111348678),
    (+0.3957926284, -0.8730642715, +0.2847928601),
    (-0.0672288771, -0.9676621093, +0.2431261409),
    (+0.9751644591, -0.1274310165, +0.1811508041),
    (-0.5892564551, +0.7913617914, +0.1628598945),
    (-0.1679948946, +0.9728899750, +0.1589427947),
    (-0.8793924101, +0.4568464564, +0.1340160599),
    (+0.3655445064, +0.9240298640, +0.1120090362),
    (+0.7413944146, +0.6695043337, +0.0458068687),
    (-0.9570323619, -0.2886715506, +0.0275280598),
], dtype=np.float64)
# stored at 10 decimals; renormalize so norms are exact to the ulp
DIRECTIONS_30 /= np.linalg.norm(DIRECTIONS_30, axis=1, keepdims=True)


@dataclass(frozen=True)
class GradientScheme:
    """Per-measurement b-value and unit direction.

    bvals: (n,) in s/mm^2, exact zeros for b=0 entries.
    bvecs: (n, 3), unit length where b > 0, (0, 0, 0) allowed at b = 0.
    """

    bvals: np.ndarray
    bvecs: np.ndarray

    def __post_init__(self):
        bvals = np.asarray(self.bvals, dtype=np.float64).ravel()
        bvecs = np.asarray(self.bvecs, dtype=np.float64)
        if bvecs.shape != (bvals.size, 3):
            raise InvalidScheme(f"bvecs shape {bvecs.shape} != ({bvals.size}, 3)")
        if np.any(bvals < 0):
            raise InvalidScheme("negative b-value")
        dw = bvals > 0
        norms = np.linalg.norm(bvecs[dw], axis=1)
        if dw.any() and np.any(np.abs(norms - 1.0) > 1e-6):
            raise InvalidScheme("non-unit direction on a b>0 entry")
        if not np.any(bvals == 0):
            raise InvalidScheme("scheme has no b=0 entry")
        object.__setattr__(self, "bvals", bvals)
        object.__setattr__(self, "bvecs", bvecs)

    def __len__(self) -> int:
        return self.bvals.size

    @property
    def b0_mask(self) -> np.ndarray:
        return self.bvals == 0

    @property
    def dwi_mask(self) -> np.ndarray:
        return self.bvals > 0

    def n_distinct_directions(self) -> int:
        """Count b>0 directions distinct up to sign."""
        g = self.bvecs[self.dwi_mask]
        flip = g[:, 2] < 0
        g = np.where(flip[:, None], -g, g)
        return np.unique(np.round(g, 6), axis=0).shape[0] if g.size else 0


def _parse_rows(path) -> list[list[float]]:
    rows = []
    text = Path(path).read_text()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        vals = []
        for tok in line.split():
            try:
                vals.append(float(tok))
            except ValueError:
                raise NonNumericToken(f"{path}: bad token {tok!r}") from None
        rows.append(vals)
    return rows


def read_scheme(bval_path, bvec_path) -> GradientScheme:
    """Read FSL-convention bval/bvec text files.

    bval: whitespace-separated b-values (one or more rows, flattened).
    bvec: three rows of x, y, z components. Directions are renormalized
    to unit length; entries with b < 10 s/mm^2 become exact b = 0.
    """
    bvals = np.array([v for row in _parse_rows(bval_path) for v in row])
    vec_rows = _parse_rows(bvec_path)
    if len(vec_rows) != 3:
        raise LengthMismatch(f"{bvec_path}: expected 3 rows, got {len(vec_rows)}")
    if len({len(r) for r in vec_rows}) != 1:
        raise LengthMismatch(f"{bvec_path}: rows have unequal lengths")
    bvecs = np.array(vec_rows).T
    if bvecs.shape[0] != bvals.size:
        raise LengthMismatch(
            f"{bval_path} has {bvals.size} entries, {bvec_path} has {bvecs.shape[0]}")

    bvals = np.where(bvals < B0_THRESHOLD, 0.0, bvals)
    norms = np.linalg.norm(bvecs, axis=1)
    dw = bvals > 0
    if np.any(dw & (norms < 1e-12)):
        raise InvalidScheme(f"{bvec_path}: zero direction on a b>0 entry")
    safe = np.where(norms > 1e-12, norms, 1.0)
    bvecs = bvecs / safe[:, None]
    bvecs[~dw & (norms < 1e-12)] = 0.0
    return GradientScheme(bvals, bvecs)


def write_scheme(scheme: GradientScheme, bval_path, bvec_path) -> None:
    """Write FSL-convention bval/bvec text files (one row / three rows)."""
    Path(bval_path).write_text(
        " ".join(f"{b:g}" for b in scheme.bvals) + "\n")
    lines = [" ".join(f"{v:.10f}" for v in scheme.bvecs[:, i]) for i in range(3)]
    Path(bvec_path).write_text("\n".join(lines) + "\n")


def protocol_scheme(n_b0: int = 6, b: float = 900.0, repeats: int = 3) -> GradientScheme:
    """Acquisition layout used throughout: n_b0 b=0 measurements followed
    by `repeats` blocks of the 30 frozen directions at the given b-value."""
    dirs = np.tile(DIRECTIONS_30, (repeats, 1))
    bvals = np.concatenate([np.zeros(n_b0), np.full(dirs.shape[0], float(b))])
    bvecs = np.vstack([np.zeros((n_b0, 3)), dirs])
    return GradientScheme(bvals, bvecs)
