"""Forward solver for reaction-diffusion tumor growth on a tissue anatomy.

The model is du/dt = div(D grad u) + rho*u*(1-u) with zero-flux boundaries,
where D varies per voxel with the local white/grey matter content and
vanishes in CSF, skull, and background. The integrator is explicit Euler on
a flux-form (finite volume) stencil with harmonic-mean face coefficients:
faces touching a zero-diffusivity voxel carry exactly zero flux, which
realizes the no-infiltration boundary without ghost cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volumes import Anatomy, ScalarField3D, DOMAIN_THRESHOLD


@dataclass(frozen=True)
class GrowthParams:
    """Biophysical parameters: diffusivity in WM (mm^2/day), proliferation
    rate (1/day), seed location as fractions of the volume extent, and the
    simulated time span in days."""

    d_w: float
    rho: float
    seed: tuple[float, float, float]
    t_days: float

    def __post_init__(self):
        if not self.d_w > 0:
            raise ValueError("d_w must be positive")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.t_days < 0:
            raise ValueError("t_days must be non-negative")
        if not all(0.0 <= s <= 1.0 for s in self.seed):
            raise ValueError("seed fractions must lie in [0, 1]")


@dataclass(frozen=True)
class SolverConfig:
    """Numerical knobs for the forward solver.

    dt_safety scales the largest stable explicit step. The default 0.3 is
    chosen for accuracy rather than bare stability: near the stability
    limit the integrator visibly lags the analytic traveling-wave speed
    (>10% at safety 0.9 on a 2 mm grid), while at 0.3 the front speed is
    reproduced to about 2%.
    """

    dw_dg_ratio: float = 10.0
    csf_domain_threshold: float = DOMAIN_THRESHOLD
    dt_safety: float = 0.3
    seed_amplitude: float = 0.1
    seed_sigma_voxels: float = 1.0

    def __post_init__(self):
        if not self.dw_dg_ratio > 0:
            raise ValueError("dw_dg_ratio must be positive")
        if not 0 < self.csf_domain_threshold < 1:
            raise ValueError("csf_domain_threshold must be in (0, 1)")
        if not 0 < self.dt_safety <= 1:
            raise ValueError("dt_safety must be in (0, 1]")
        if not 0 < self.seed_amplitude <= 1:
            raise ValueError("seed_amplitude must be in (0, 1]")
        if not self.seed_sigma_voxels > 0:
            raise ValueError("seed_sigma_voxels must be positive")


def diffusion_field(
    anatomy: Anatomy,
    d_w: float,
    ratio: float = 10.0,
    csf_domain_threshold: float = DOMAIN_THRESHOLD,
) -> ScalarField3D:
    """Per-voxel diffusivity D = p_wm*D_w + p_gm*(D_w/ratio).

    Voxels with combined WM+GM at or below ``csf_domain_threshold`` are
    excluded from the domain and get D = 0.
    """
    if not d_w > 0:
        raise ValueError("d_w must be positive")
    d_g = d_w / ratio
    D = anatomy.wm.data * d_w + anatomy.gm.data * d_g
    D[~anatomy.domain_mask(csf_domain_threshold)] = 0.0
    return ScalarField3D(D, anatomy.spacing_mm)


def stable_dt(d_field: ScalarField3D, rho: float, spacing_mm: float, safety: float = 0.3) -> float:
    """Largest explicit step (days) scaled by ``safety``.

    dt = safety * min(h^2 / (6 * D_max), 1/rho). Under this bound the
    diffusion update is a convex combination of neighbor values and the
    logistic update cannot overshoot 1.
    """
    d_max = float(np.max(d_field.data))
    if d_max <= 0 and rho <= 0:
        raise ValueError("static model: no diffusion and no proliferation")
    h = spacing_mm
    candidates = []
    if d_max > 0:
        candidates.append(h * h / (6.0 * d_max))
    if rho > 0:
        candidates.append(1.0 / rho)
    return safety * min(candidates)


def seed_voxel(dims: tuple[int, int, int], seed_frac: tuple[float, float, float]) -> tuple[int, int, int]:
    """Map fractional seed coordinates onto the voxel grid (0 -> 0, 1 -> n-1)."""
    return tuple(int(round(f * (n - 1))) for f, n in zip(seed_frac, dims))


def init_seed(anatomy: Anatomy, seed_frac: tuple[float, float, float], cfg: SolverConfig) -> ScalarField3D:
    """Initial condition: truncated Gaussian bump at the seed voxel.

    u = amplitude * exp(-d^2 / (2 sigma^2)) for voxel distance d <= 3 sigma,
    zero beyond and zero outside the tissue domain. The seed voxel itself
    must lie inside the domain.
    """
    nx, ny, nz = anatomy.dims
    sx, sy, sz = seed_voxel((nx, ny, nz), seed_frac)
    domain = anatomy.domain_mask(cfg.csf_domain_threshold)
    if not domain[sz, sy, sx]:
        raise ValueError(
            f"seed outside tissue domain: voxel ({sx}, {sy}, {sz}) has insufficient WM+GM"
        )
    zz, yy, xx = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    d2 = (xx - sx) ** 2 + (yy - sy) ** 2 + (zz - sz) ** 2
    sig = cfg.seed_sigma_voxels
    u = cfg.seed_amplitude * np.exp(-d2 / (2.0 * sig * sig))
    u[d2 > (3.0 * sig) ** 2] = 0.0
    u[~domain] = 0.0
    return ScalarField3D(u, anatomy.spacing_mm)


def _face_coefficients(D: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Harmonic-mean diffusivity on the three face families (x, y, z)."""
    out = []
    for sl_a, sl_b in (
        (np.s_[:, :, :-1], np.s_[:, :, 1:]),
        (np.s_[:, :-1, :], np.s_[:, 1:, :]),
        (np.s_[:-1, :, :], np.s_[1:, :, :]),
    ):
        a, b = D[sl_a], D[sl_b]
        s = a + b
        H = np.zeros_like(a)
        np.divide(2.0 * a * b, s, out=H, where=s > 0)
        out.append(H)
    return tuple(out)


def _step_kernel(u, faces, rho, dt, h):
    """One explicit update: flux-form diffusion, then logistic growth on the
    diffused state. The sequential split keeps u in [0, 1] for any step
    within the stability bound."""
    hx, hy, hz = faces
    acc = np.zeros_like(u)
    f = hx * (u[:, :, 1:] - u[:, :, :-1])
    acc[:, :, :-1] += f
    acc[:, :, 1:] -= f
    f = hy * (u[:, 1:, :] - u[:, :-1, :])
    acc[:, :-1, :] += f
    acc[:, 1:, :] -= f
    f = hz * (u[1:, :, :] - u[:-1, :, :])
    acc[:-1, :, :] += f
    acc[1:, :, :] -= f
    v = u + (dt / (h * h)) * acc
    if rho != 0.0:
        v = v + (dt * rho) * v * (1.0 - v)
    return v


def step(u: ScalarField3D, d_field: ScalarField3D, rho: float, dt: float, h: float) -> ScalarField3D:
    """Advance the density one explicit step of length ``dt`` days.

    Rejects steps beyond the stability bound (convexity of the diffusion
    update and monotonicity of the logistic update would be lost).
    """
    d_max = float(np.max(d_field.data))
    if d_max > 0 and dt > h * h / (6.0 * d_max) * (1.0 + 1e-12):
        raise ValueError(f"unstable step: dt={dt} exceeds h^2/(6 D_max)")
    if rho > 0 and dt * rho > 1.0 + 1e-12:
        raise ValueError(f"unstable step: dt*rho={dt * rho} exceeds 1")
    faces = _face_coefficients(d_field.data)
    return ScalarField3D(_step_kernel(u.data, faces, rho, dt, h), u.spacing_mm)


def simulate(anatomy: Anatomy, params: GrowthParams, cfg: SolverConfig = SolverConfig()) -> ScalarField3D:
    """Run the growth model to t = params.t_days and return the density.

    Fixed stable step with a final partial step landing exactly on the
    requested time, so the output is continuous in t_days. Deterministic:
    identical inputs give bitwise-identical outputs.
    """
    D = diffusion_field(anatomy, params.d_w, cfg.dw_dg_ratio, cfg.csf_domain_threshold)
    u = init_seed(anatomy, params.seed, cfg).data
    if params.t_days == 0:
        return ScalarField3D(u, anatomy.spacing_mm)
    dt = stable_dt(D, params.rho, anatomy.spacing_mm, cfg.dt_safety)
    faces = _face_coefficients(D.data)
    h = anatomy.spacing_mm
    t = 0.0
    while True:
        remaining = params.t_days - t
        if remaining <= dt * (1.0 + 1e-12):
            u = _step_kernel(u, faces, params.rho, remaining, h)
            break
        u = _step_kernel(u, faces, params.rho, dt, h)
        t += dt
    return ScalarField3D(u, anatomy.spacing_mm)
