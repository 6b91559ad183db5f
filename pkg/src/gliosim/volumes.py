"""Volumetric data types, crop/embed windows, on-disk volume format, and a
synthetic anatomy phantom.

A volume on disk is a pair of files: ``<name>.json`` carrying the header
(dims, spacing, dtype, ordering) and ``<name>.raw`` carrying the voxel
payload as little-endian float32 in x-fastest order
(flat index = x + nx*(y + ny*z)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VOLUME_FORMAT_VERSION = 1

# Voxels whose combined WM+GM probability is at or below this value are
# treated as outside the growth domain (CSF, skull, background).
DOMAIN_THRESHOLD = 0.1


class VolumeFormatError(ValueError):
    """Raised for malformed, truncated, or unsupported volume files."""


@dataclass(frozen=True)
class ScalarField3D:
    """Dense 3D scalar grid with isotropic voxel spacing.

    ``data`` is stored as an array of shape (nz, ny, nx) so that the flat
    C-order layout is x-fastest, matching the on-disk format. ``dims`` is
    reported as (nx, ny, nz) and voxel coordinates are (x, y, z) throughout.
    """

    data: np.ndarray
    spacing_mm: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"expected 3D data, got ndim={arr.ndim}")
        if not self.spacing_mm > 0:
            raise ValueError("spacing_mm must be positive")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    def at(self, x: int, y: int, z: int) -> float:
        return float(self.data[z, y, x])

    def flat(self) -> np.ndarray:
        """Voxel values in x-fastest order, length nx*ny*nz."""
        return self.data.reshape(-1)


@dataclass(frozen=True)
class Anatomy:
    """Probabilistic tissue maps (WM, GM, CSF) on a common grid.

    Per voxel the probabilities are non-negative and sum to at most 1;
    the remainder is background/skull.
    """

    wm: ScalarField3D
    gm: ScalarField3D
    csf: ScalarField3D

    def __post_init__(self):
        dims = self.wm.dims
        sp = self.wm.spacing_mm
        for name, f in (("gm", self.gm), ("csf", self.csf)):
            if f.dims != dims:
                raise ValueError(f"{name} dims {f.dims} != wm dims {dims}")
            if f.spacing_mm != sp:
                raise ValueError(f"{name} spacing differs from wm")
        for name, f in (("wm", self.wm), ("gm", self.gm), ("csf", self.csf)):
            if np.any(f.data < 0) or np.any(f.data > 1):
                raise ValueError(f"{name} probabilities outside [0, 1]")
        # tolerance covers float32 storage round-trips
        total = self.wm.data + self.gm.data + self.csf.data
        if np.any(total > 1.0 + 1e-6):
            raise ValueError("tissue probabilities sum to more than 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.wm.dims

    @property
    def spacing_mm(self) -> float:
        return self.wm.spacing_mm

    def domain_mask(self, threshold: float = DOMAIN_THRESHOLD) -> np.ndarray:
        """Boolean mask of the growth domain: WM+GM above ``threshold``."""
        return (self.wm.data + self.gm.data) > threshold


@dataclass(frozen=True)
class CropSpec:
    """Cube crop window: ``side`` voxels centered at voxel ``center`` (x, y, z)."""

    center: tuple[int, int, int]
    side: int = 64

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError("crop side must be positive")


def crop_centered(f: ScalarField3D, spec: CropSpec, pad_value: float = 0.0) -> ScalarField3D:
    """Extract a side^3 cube centered at ``spec.center``.

    Local voxel o maps to source voxel center - side//2 + o on each axis;
    voxels falling outside the source are filled with ``pad_value``. The
    center must lie inside the source volume.
    """
    nx, ny, nz = f.dims
    cx, cy, cz = spec.center
    if not (0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz):
        raise ValueError(f"seed outside volume: center {spec.center} not in dims {f.dims}")
    s = spec.side
    out = np.full((s, s, s), float(pad_value), dtype=np.float64)
    lo = [c - s // 2 for c in (cx, cy, cz)]  # source coordinate of local 0
    src_sl, dst_sl = [], []
    for axis, n in ((0, nx), (1, ny), (2, nz)):
        a = max(lo[axis], 0)
        b = min(lo[axis] + s, n)
        src_sl.append(slice(a, b))
        dst_sl.append(slice(a - lo[axis], b - lo[axis]))
    # data is indexed [z, y, x]
    out[dst_sl[2], dst_sl[1], dst_sl[0]] = f.data[src_sl[2], src_sl[1], src_sl[0]]
    return ScalarField3D(out, f.spacing_mm)


def embed(
    crop: ScalarField3D,
    target_dims: tuple[int, int, int],
    center: tuple[int, int, int],
    fill: float = 0.0,
    spacing_mm: float | None = None,
) -> ScalarField3D:
    """Place ``crop`` into a fresh volume of ``target_dims`` at ``center``.

    Inverse of :func:`crop_centered` on the in-bounds region; voxels of the
    crop overhanging the target are discarded, everything else is ``fill``.
    """
    nx, ny, nz = target_dims
    cs = crop.dims[0]
    cx, cy, cz = center
    out = np.full((nz, ny, nx), float(fill), dtype=np.float64)
    lo = [c - cs // 2 for c in (cx, cy, cz)]
    src_sl, dst_sl = [], []
    for axis, n in ((0, nx), (1, ny), (2, nz)):
        a = max(lo[axis], 0)
        b = min(lo[axis] + cs, n)
        if b <= a:
            return ScalarField3D(out, spacing_mm or crop.spacing_mm)
        dst_sl.append(slice(a, b))
        src_sl.append(slice(a - lo[axis], b - lo[axis]))
    out[dst_sl[2], dst_sl[1], dst_sl[0]] = crop.data[src_sl[2], src_sl[1], src_sl[0]]
    return ScalarField3D(out, spacing_mm or crop.spacing_mm)


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def save_volume(f: ScalarField3D, path) -> None:
    """Write ``<path>.json`` + ``<path>.raw`` (f32le, x-fastest)."""
    hdr_path, raw_path = _paths(path)
    nx, ny, nz = f.dims
    header = {
        "version": VOLUME_FORMAT_VERSION,
        "dims": [nx, ny, nz],
        "spacing_mm": f.spacing_mm,
        "dtype": "f32le",
        "order": "x-fastest",
    }
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    hdr_path.write_text(json.dumps(header))
    payload = f.data.astype("<f4").tobytes(order="C")
    raw_path.write_bytes(payload)


def load_volume(path) -> ScalarField3D:
    """Read a volume pair written by :func:`save_volume`."""
    hdr_path, raw_path = _paths(path)
    try:
        header = json.loads(hdr_path.read_text())
    except json.JSONDecodeError as e:
        raise VolumeFormatError(f"malformed header {hdr_path}: {e}") from e
    if not isinstance(header, dict) or "version" not in header:
        raise VolumeFormatError(f"malformed header {hdr_path}: missing version")
    if header["version"] != VOLUME_FORMAT_VERSION:
        raise VolumeFormatError(f"unsupported version {header['version']!r}")
    try:
        dims = header["dims"]
        nx, ny, nz = (int(d) for d in dims)
        spacing = float(header["spacing_mm"])
        dtype = header["dtype"]
        order = header["order"]
    except (KeyError, TypeError, ValueError) as e:
        raise VolumeFormatError(f"malformed header {hdr_path}: {e}") from e
    if dtype != "f32le" or order != "x-fastest":
        raise VolumeFormatError(f"unsupported dtype/order: {dtype}/{order}")
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise VolumeFormatError(f"non-positive dims {dims}")
    raw = raw_path.read_bytes()
    expected = nx * ny * nz * 4
    if len(raw) != expected:
        raise VolumeFormatError(
            f"payload length mismatch: expected {expected} bytes, got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(nz, ny, nx)
    return ScalarField3D(data, spacing)


def _cosine_membership(signed_dist, ramp_voxels=3.0):
    """Smooth 1 -> 0 transition over ``ramp_voxels`` around signed distance 0."""
    half = ramp_voxels / 2.0
    t = np.clip(signed_dist / half, -1.0, 1.0)
    return np.where(
        signed_dist <= -half, 1.0, np.where(signed_dist >= half, 0.0, 0.5 - 0.5 * np.sin(0.5 * np.pi * t))
    )


def _ellipsoid_dist(zz, yy, xx, center, semi_axes):
    # Approximate signed distance (voxels) to the ellipsoid surface:
    # (radial coordinate - 1) scaled by the smallest semi-axis.
    cx, cy, cz = center
    ax, ay, az = semi_axes
    r = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 + ((zz - cz) / az) ** 2)
    return (r - 1.0) * min(ax, ay, az)


def gen_phantom(
    dims: tuple[int, int, int],
    spacing_mm: float = 2.0,
    rng_seed: int = 0,
) -> Anatomy:
    """Generate a deterministic synthetic brain anatomy.

    Ellipsoidal brain with a WM core, a GM shell, and 1-3 ellipsoidal CSF
    inclusions standing in for ventricles. Tissue boundaries get a 3-voxel
    cosine ramp so the maps are genuinely probabilistic. Identical
    (dims, spacing_mm, rng_seed) always produce the identical anatomy.
    """
    nx, ny, nz = dims
    if min(nx, ny, nz) < 16:
        raise ValueError(f"dims too small: {dims}, need at least 16 per axis")
    rng = np.random.default_rng(rng_seed)

    zz, yy, xx = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    center = (
        (nx - 1) / 2.0 + rng.uniform(-0.02, 0.02) * nx,
        (ny - 1) / 2.0 + rng.uniform(-0.02, 0.02) * ny,
        (nz - 1) / 2.0 + rng.uniform(-0.02, 0.02) * nz,
    )
    brain_axes = tuple(0.5 * n * rng.uniform(0.80, 0.92) for n in (nx, ny, nz))
    brain = _cosine_membership(_ellipsoid_dist(zz, yy, xx, center, brain_axes))

    core_axes = tuple(a * rng.uniform(0.55, 0.68) for a in brain_axes)
    core = _cosine_membership(_ellipsoid_dist(zz, yy, xx, center, core_axes))

    n_csf = int(rng.integers(1, 4))
    csf_mem = np.zeros_like(brain)
    for _ in range(n_csf):
        # ventricle proxies sit inside the WM core, near the brain center
        off = rng.uniform(-0.18, 0.18, size=3) * np.array([nx, ny, nz])
        c = (center[0] + off[0], center[1] + off[1], center[2] + off[2])
        axes = tuple(max(2.0, a * rng.uniform(0.10, 0.22)) for a in brain_axes)
        m = _cosine_membership(_ellipsoid_dist(zz, yy, xx, c, axes))
        csf_mem = 1.0 - (1.0 - csf_mem) * (1.0 - m)

    p_csf = brain * csf_mem
    p_wm = brain * core * (1.0 - csf_mem)
    p_gm = brain * (1.0 - core) * (1.0 - csf_mem)

    return Anatomy(
        wm=ScalarField3D(p_wm, spacing_mm),
        gm=ScalarField3D(p_gm, spacing_mm),
        csf=ScalarField3D(p_csf, spacing_mm),
    )


def anatomy_channels(a: Anatomy) -> np.ndarray:
    """Stack (wm, gm, csf) as a 3-channel activation laid out [ch][z][y][x]."""
    return np.stack([a.wm.data, a.gm.data, a.csf.data], axis=0)


def crop_anatomy(a: Anatomy, spec: CropSpec) -> Anatomy:
    """Crop all three tissue maps; outside-brain voxels pad with zero tissue."""
    return Anatomy(
        wm=crop_centered(a.wm, spec, 0.0),
        gm=crop_centered(a.gm, spec, 0.0),
        csf=crop_centered(a.csf, spec, 0.0),
    )


def save_anatomy(a: Anatomy, out_dir, name: str = "anatomy") -> Path:
    """Write wm/gm/csf volume pairs plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for tissue, f in (("wm", a.wm), ("gm", a.gm), ("csf", a.csf)):
        save_volume(f, out / f"{name}_{tissue}")
    manifest = {
        "version": 1,
        "wm": f"{name}_wm",
        "gm": f"{name}_gm",
        "csf": f"{name}_csf",
        "spacing_mm": a.spacing_mm,
        "dims": list(a.dims),
    }
    mpath = out / f"{name}.json"
    mpath.write_text(json.dumps(manifest, indent=2))
    return mpath


def load_anatomy(manifest_path) -> Anatomy:
    mpath = Path(manifest_path)
    manifest = json.loads(mpath.read_text())
    base = mpath.parent
    return Anatomy(
        wm=load_volume(base / manifest["wm"]),
        gm=load_volume(base / manifest["gm"]),
        csf=load_volume(base / manifest["csf"]),
    )
