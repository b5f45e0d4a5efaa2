"""Synthetic spinal-cord DWI with known ground truth.

A straight cylindrical cord along z inside an empty background, split
into vertebral levels by z-range, with a white-matter annulus around a
gray-matter core. Every cord voxel gets the Ball-and-Stick signal of its
tissue class, so fitted maps can be checked against exact truth. Lesions
are ellipsoids that override the tissue parameters. Default geometry:
80x80x16 voxels at 2x2x2 mm, like the acquisitions this mimics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from cordscan.ballstick import BallStickParams, predict_ballstick
from cordscan.errors import InvalidSpec
from cordscan.gradients import GradientScheme, protocol_scheme
from cordscan.volume import Volume


@dataclass
class Tissue:
    """Ball-and-Stick truth for one tissue class.

    lambda_perp, when set, overrides the spec-wide stick regularization
    for this class (e.g. demyelinated tissue with raised perpendicular
    diffusivity); the fitting side keeps its own fixed constant.
    """
    f: float
    d: float
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    lambda_perp: float | None = None

    def params(self, d0: float, lambda_perp: float) -> BallStickParams:
        n = np.asarray(self.direction, dtype=np.float64)
        n = n / np.linalg.norm(n)
        lp = self.lambda_perp if self.lambda_perp is not None else lambda_perp
        return BallStickParams(f=self.f, d=self.d, n=n,
                               d0=d0, lambda_perp=lp)


@dataclass
class Lesion:
    center: tuple[int, int, int]          # voxel indices
    radii: tuple[float, float, float]     # mm
    tissue: Tissue = field(default_factory=lambda: Tissue(f=0.21, d=1.02e-3))


# Healthy WM echoes the healthy-cohort means; the default lesion echoes
# the lesioned-cohort means, so group effect directions match expectation.
DEFAULT_WM = Tissue(f=0.16, d=1.14e-3)
DEFAULT_GM = Tissue(f=0.30, d=0.80e-3)


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (80, 80, 16)
    voxel_size: tuple[float, float, float] = (2.0, 2.0, 2.0)
    cord_radius: float = 4.0              # mm
    wm_annulus: tuple[float, float] = (1.5, 4.0)  # inner/outer radius, mm
    s0: float = 1000.0
    levels: list[tuple[int, int, int]] | None = None  # (label, z_lo, z_hi) inclusive
    wm: Tissue = field(default_factory=lambda: DEFAULT_WM)
    gm: Tissue = field(default_factory=lambda: DEFAULT_GM)
    level_wm: dict[int, Tissue] = field(default_factory=dict)  # per-level WM override
    lesions: list[Lesion] = field(default_factory=list)
    noise: str = "none"                   # none | gaussian | rician
    sigma: float = 0.0
    seed: int = 0
    d0: float = 3.0e-3
    lambda_perp: float = 0.2e-3
    b: float = 900.0
    repeats: int = 3
    n_b0: int = 6

    def level_table(self) -> list[tuple[int, int, int]]:
        if self.levels is not None:
            return [(int(l), int(a), int(b)) for l, a, b in self.levels]
        nz = self.dims[2]
        splits = np.array_split(np.arange(nz), 7)
        return [(i + 1, int(chunk[0]), int(chunk[-1]))
                for i, chunk in enumerate(splits) if chunk.size]

    def validate(self) -> None:
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise InvalidSpec(f"bad dims {self.dims}")
        if any(v <= 0 for v in self.voxel_size):
            raise InvalidSpec(f"bad voxel_size {self.voxel_size}")
        if self.sigma < 0:
            raise InvalidSpec("sigma must be >= 0")
        if self.noise not in ("none", "gaussian", "rician"):
            raise InvalidSpec(f"unknown noise model {self.noise!r}")
        inner, outer = self.wm_annulus
        if not 0 <= inner < outer or outer > self.cord_radius + 1e-9:
            raise InvalidSpec(f"bad annulus {self.wm_annulus} for cord radius {self.cord_radius}")
        table = self.level_table()
        covered = np.zeros(self.dims[2], dtype=bool)
        for label, z_lo, z_hi in table:
            if not 1 <= label <= 7 or z_lo > z_hi or z_lo < 0 or z_hi >= self.dims[2]:
                raise InvalidSpec(f"bad level entry ({label}, {z_lo}, {z_hi})")
            if covered[z_lo:z_hi + 1].any():
                raise InvalidSpec("level z-ranges overlap")
            covered[z_lo:z_hi + 1] = True
        if not covered.all():
            raise InvalidSpec("level z-ranges do not cover all slices")


@dataclass
class LabelMap:
    """Vertebral level labels, WM partial-volume weights, optional lesion mask."""
    levels: Volume       # int labels, 0 = background, 1..7 = C1..C7
    wm_weight: Volume    # in [0, 1]
    lesion: Volume | None = None


@dataclass
class PhantomOutput:
    dwi: Volume
    scheme: GradientScheme
    labels: LabelMap
    truth: dict[str, Volume]
    spec: PhantomSpec


def add_noise(signal, model: str, sigma: float, rng: np.random.Generator):
    """Gaussian or Rician noise on non-negative signal (vectorized).

    rician: sqrt((S + N1)^2 + N2^2) with independent N(0, sigma);
    sigma = 0 or model 'none' returns the input unchanged.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if sigma == 0.0 or model == "none":
        return signal
    if model == "gaussian":
        return signal + sigma * rng.standard_normal(signal.shape)
    if model == "rician":
        n1 = rng.standard_normal(signal.shape)
        n2 = rng.standard_normal(signal.shape)
        return np.sqrt((signal + sigma * n1) ** 2 + (sigma * n2) ** 2)
    raise InvalidSpec(f"unknown noise model {model!r}")


def _radial_grid(spec: PhantomSpec):
    nx, ny, _ = spec.dims
    dx, dy, _ = spec.voxel_size
    cx = (nx - 1) / 2.0 * dx
    cy = (ny - 1) / 2.0 * dy
    xs = np.arange(nx)[:, None] * dx
    ys = np.arange(ny)[None, :] * dy
    return xs - cx, ys - cy


def _wm_weight_map(spec: PhantomSpec) -> np.ndarray:
    """Fraction of a 3x3x3 subvoxel grid inside the WM annulus."""
    nx, ny, nz = spec.dims
    dx, dy, _ = spec.voxel_size
    xrel, yrel = _radial_grid(spec)
    inner, outer = spec.wm_annulus
    offsets = np.array([-1.0 / 3.0, 0.0, 1.0 / 3.0])
    count = np.zeros((nx, ny))
    for ox in offsets * dx:
        for oy in offsets * dy:
            r2 = (xrel + ox) ** 2 + (yrel + oy) ** 2
            count += (r2 >= inner ** 2) & (r2 <= outer ** 2)
    weight = count * (3.0 / 27.0)  # z offsets do not change a z-aligned cylinder
    return np.repeat(weight[:, :, None], nz, axis=2)


def generate(spec: PhantomSpec) -> PhantomOutput:
    """Build the synthetic dataset. Deterministic given spec.seed."""
    spec.validate()
    nx, ny, nz = spec.dims
    dx, dy, dz = spec.voxel_size
    scheme = protocol_scheme(n_b0=spec.n_b0, b=spec.b, repeats=spec.repeats)

    xrel, yrel = _radial_grid(spec)
    r2 = xrel ** 2 + yrel ** 2
    cord2d = r2 <= spec.cord_radius ** 2
    inner, outer = spec.wm_annulus
    wm2d = cord2d & (r2 >= inner ** 2) & (r2 <= outer ** 2)

    levels = np.zeros(spec.dims, dtype=np.int16)
    for label, z_lo, z_hi in spec.level_table():
        levels[:, :, z_lo:z_hi + 1] = np.where(cord2d[:, :, None], label, 0)

    lesion_mask = np.zeros(spec.dims, dtype=bool)
    for les in spec.lesions:
        ci, cj, ck = les.center
        rx, ry, rz = les.radii
        ii = (np.arange(nx) - ci)[:, None, None] * dx
        jj = (np.arange(ny) - cj)[None, :, None] * dy
        kk = (np.arange(nz) - ck)[None, None, :] * dz
        inside = (ii / rx) ** 2 + (jj / ry) ** 2 + (kk / rz) ** 2 <= 1.0
        if not inside.any():
            raise InvalidSpec(f"lesion at {les.center} covers no voxel")
        if (inside & (levels == 0)).any():
            raise InvalidSpec(f"lesion at {les.center} extends outside the cord")
        lesion_mask |= inside

    # class ids: 0 background, 1 gm, 2 wm (per level when overridden),
    # lesions get ids after the tissue classes
    class_of = np.zeros(spec.dims, dtype=np.int32)
    class_params: list[BallStickParams | None] = [None]
    gm_id = len(class_params)
    class_params.append(spec.gm.params(spec.d0, spec.lambda_perp))
    class_of[cord2d[:, :, None] & (levels > 0)] = gm_id

    wm_ids = {}
    for label, z_lo, z_hi in spec.level_table():
        tissue = spec.level_wm.get(label, spec.wm)
        key = (tissue.f, tissue.d, tuple(tissue.direction), tissue.lambda_perp)
        if key not in wm_ids:
            wm_ids[key] = len(class_params)
            class_params.append(tissue.params(spec.d0, spec.lambda_perp))
        zslab = np.zeros(nz, dtype=bool)
        zslab[z_lo:z_hi + 1] = True
        class_of[wm2d[:, :, None] & zslab[None, None, :]] = wm_ids[key]

    for les in spec.lesions:
        ci, cj, ck = les.center
        rx, ry, rz = les.radii
        ii = (np.arange(nx) - ci)[:, None, None] * dx
        jj = (np.arange(ny) - cj)[None, :, None] * dy
        kk = (np.arange(nz) - ck)[None, None, :] * dz
        inside = (ii / rx) ** 2 + (jj / ry) ** 2 + (kk / rz) ** 2 <= 1.0
        lid = len(class_params)
        class_params.append(les.tissue.params(spec.d0, spec.lambda_perp))
        class_of[inside] = lid

    # one forward simulation per class, broadcast to voxels
    n_meas = len(scheme)
    signal_table = np.zeros((len(class_params), n_meas))
    for cid, params in enumerate(class_params):
        if params is not None:
            signal_table[cid] = spec.s0 * predict_ballstick(params, scheme)
    dwi_data = signal_table[class_of]

    if spec.noise != "none" and spec.sigma > 0:
        # one counter-based stream in fixed (voxel, measurement) order:
        # output does not depend on any processing schedule
        rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.seed)))
        dwi_data = add_noise(dwi_data, spec.noise, spec.sigma, rng)

    affine = np.diag([dx, dy, dz, 1.0])
    vol = lambda arr: Volume(arr, spec.voxel_size, affine)

    truth_maps = {"fww": 0, "stick_ad": 1, "nx": 2, "ny": 3, "nz": 4,
                  "lambda_perp": 5}
    truth_table = np.zeros((len(class_params), 6))
    for cid, params in enumerate(class_params):
        if params is not None:
            truth_table[cid] = (params.f, params.d, *params.n, params.lambda_perp)
    truth_stack = truth_table[class_of]
    truth = {name: vol(truth_stack[..., idx]) for name, idx in truth_maps.items()}

    labels = LabelMap(levels=vol(levels.astype(np.int16)),
                      wm_weight=vol(_wm_weight_map(spec)),
                      lesion=vol(lesion_mask.astype(np.uint8)))
    return PhantomOutput(dwi=vol(dwi_data), scheme=scheme, labels=labels,
                         truth=truth, spec=spec)


def _tissue_from_json(obj, what: str) -> Tissue:
    try:
        lp = obj.get("lambda_perp")
        return Tissue(f=float(obj["f"]), d=float(obj["d"]),
                      direction=tuple(obj.get("direction", (0.0, 0.0, 1.0))),
                      lambda_perp=None if lp is None else float(lp))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad tissue entry for {what}: {exc}") from exc


def spec_from_json(text: str) -> PhantomSpec:
    """Parse the JSON phantom description accepted by the CLI."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"spec is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidSpec("spec must be a JSON object")
    known = {"dims", "voxel_size", "cord_radius", "wm_annulus", "s0", "levels",
             "wm", "gm", "level_wm", "lesions", "noise", "sigma", "seed",
             "d0", "lambda_perp", "b", "repeats", "n_b0"}
    unknown = set(obj) - known
    if unknown:
        raise InvalidSpec(f"unknown spec keys: {sorted(unknown)}")
    spec = PhantomSpec()
    for key in ("cord_radius", "s0", "sigma", "d0", "lambda_perp", "b"):
        if key in obj:
            setattr(spec, key, float(obj[key]))
    for key in ("seed", "repeats", "n_b0"):
        if key in obj:
            setattr(spec, key, int(obj[key]))
    if "noise" in obj:
        spec.noise = str(obj["noise"])
    if "dims" in obj:
        spec.dims = tuple(int(v) for v in obj["dims"])
    if "voxel_size" in obj:
        spec.voxel_size = tuple(float(v) for v in obj["voxel_size"])
    if "wm_annulus" in obj:
        spec.wm_annulus = tuple(float(v) for v in obj["wm_annulus"])
    if "levels" in obj:
        spec.levels = [tuple(int(v) for v in row) for row in obj["levels"]]
    if "wm" in obj:
        spec.wm = _tissue_from_json(obj["wm"], "wm")
    if "gm" in obj:
        spec.gm = _tissue_from_json(obj["gm"], "gm")
    if "level_wm" in obj:
        spec.level_wm = {int(k): _tissue_from_json(v, f"level {k}")
                         for k, v in obj["level_wm"].items()}
    for i, les in enumerate(obj.get("lesions", [])):
        try:
            tissue = (_tissue_from_json(les, f"lesion {i}") if "f" in les
                      else Tissue(f=0.21, d=1.02e-3))
            spec.lesions.append(Lesion(center=tuple(int(v) for v in les["center"]),
                                       radii=tuple(float(v) for v in les["radii"]),
                                       tissue=tissue))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad lesion entry {i}: {exc}") from exc
    spec.validate()
    return spec
