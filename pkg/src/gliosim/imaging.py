"""Probabilistic imaging model linking tumor density to MRI segmentations
and PET signal, plus a synthetic observation generator.

Binary MRI maps (T1c, FLAIR) are Bernoulli observations whose per-voxel
positive probability is a double logistic sigmoid of the density around a
modality threshold. The normalized PET signal is Gaussian around b*u.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volumes import Anatomy, ScalarField3D, DOMAIN_THRESHOLD, load_volume, save_volume

# Probabilities are clamped away from {0, 1} so log-likelihoods stay finite.
ALPHA_EPS = 1e-7


@dataclass(frozen=True)
class ImagingParams:
    """Imaging model parameters: visibility thresholds for T1c and FLAIR,
    threshold uncertainty sigma_alpha, PET proportionality b, PET noise sigma."""

    uc_t1c: float
    uc_flair: float
    sigma_alpha: float
    b: float
    sigma: float

    def __post_init__(self):
        for name in ("uc_t1c", "uc_flair", "sigma_alpha", "b", "sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("uc_t1c", "uc_flair"):
            if not getattr(self, name) < 1:
                raise ValueError(f"{name} must be below 1")


@dataclass(frozen=True)
class Observation:
    """Observed triplet (binary T1c, binary FLAIR, PET in [0,1]) with the
    brain-domain mask over which likelihoods are evaluated."""

    y_t1c: ScalarField3D
    y_flair: ScalarField3D
    y_pet: ScalarField3D
    roi_mask: np.ndarray

    def __post_init__(self):
        dims = self.y_t1c.dims
        for name, f in (("y_flair", self.y_flair), ("y_pet", self.y_pet)):
            if f.dims != dims:
                raise ValueError(f"{name} dims {f.dims} != {dims}")
        for name, f in (("y_t1c", self.y_t1c), ("y_flair", self.y_flair)):
            vals = f.data
            if not np.all((vals == 0.0) | (vals == 1.0)):
                raise ValueError(f"{name} must be binary")
        if np.any(self.y_pet.data < 0) or np.any(self.y_pet.data > 1):
            raise ValueError("y_pet must lie in [0, 1]")
        mask = np.asarray(self.roi_mask, dtype=bool)
        if mask.shape != self.y_t1c.data.shape:
            raise ValueError("roi_mask shape mismatch")
        object.__setattr__(self, "roi_mask", mask)


def alpha(u, u_c: float, sigma_alpha: float):
    """Double logistic sigmoid: probability of a positive voxel given density u.

    alpha = 0.5 + 0.5*sign(u - u_c)*(1 - exp(-(u - u_c)^2 / sigma_alpha^2)),
    clamped to [ALPHA_EPS, 1 - ALPHA_EPS]. Accepts scalars or arrays.
    """
    if not sigma_alpha > 0:
        raise ValueError("sigma_alpha must be positive")
    d = np.asarray(u, dtype=np.float64) - u_c
    a = 0.5 + 0.5 * np.sign(d) * (1.0 - np.exp(-(d * d) / (sigma_alpha * sigma_alpha)))
    return np.clip(a, ALPHA_EPS, 1.0 - ALPHA_EPS)


def loglik_mri(y: ScalarField3D, u: ScalarField3D, u_c: float, sigma_alpha: float, roi: np.ndarray) -> float:
    """Bernoulli log-likelihood of a binary segmentation over the roi."""
    if y.data.shape != u.data.shape:
        raise ValueError(f"shape mismatch: {y.dims} vs {u.dims}")
    a = alpha(u.data[roi], u_c, sigma_alpha)
    yv = y.data[roi]
    return float(np.sum(yv * np.log(a) + (1.0 - yv) * np.log(1.0 - a)))


def loglik_pet(y_pet: ScalarField3D, u: ScalarField3D, b: float, sigma: float, roi: np.ndarray) -> float:
    """Gaussian log-likelihood of the PET signal around b*u over the roi."""
    if y_pet.data.shape != u.data.shape:
        raise ValueError(f"shape mismatch: {y_pet.dims} vs {u.dims}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    r = y_pet.data[roi] - b * u.data[roi]
    n = r.size
    return float(-n * np.log(sigma * np.sqrt(2.0 * np.pi)) - np.sum(r * r) / (2.0 * sigma * sigma))


def total_loglik(obs: Observation, u: ScalarField3D, theta_i: ImagingParams) -> float:
    """Joint log-likelihood of the independent T1c, FLAIR, and PET channels."""
    if u.data.shape != obs.y_t1c.data.shape:
        raise ValueError(f"shape mismatch: {u.dims} vs {obs.y_t1c.dims}")
    roi = obs.roi_mask
    return (
        loglik_mri(obs.y_t1c, u, theta_i.uc_t1c, theta_i.sigma_alpha, roi)
        + loglik_mri(obs.y_flair, u, theta_i.uc_flair, theta_i.sigma_alpha, roi)
        + loglik_pet(obs.y_pet, u, theta_i.b, theta_i.sigma, roi)
    )


def synth_observation(
    u_true: ScalarField3D,
    theta_i_true: ImagingParams,
    anatomy: Anatomy,
    rng_seed: int = 0,
    domain_threshold: float | None = None,
) -> Observation:
    """Sample a synthetic observation from the generative imaging model.

    Binary maps drawn voxel-wise from Bernoulli(alpha); PET is b*u plus
    Gaussian noise, clamped to [0, 1]. The roi is the tissue growth domain.
    Deterministic per seed.
    """
    if np.any(u_true.data < 0) or np.any(u_true.data > 1):
        raise ValueError("u_true must lie in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    thr = DOMAIN_THRESHOLD if domain_threshold is None else domain_threshold
    roi = anatomy.domain_mask(thr)

    a_t1c = alpha(u_true.data, theta_i_true.uc_t1c, theta_i_true.sigma_alpha)
    a_flair = alpha(u_true.data, theta_i_true.uc_flair, theta_i_true.sigma_alpha)
    y_t1c = (rng.random(u_true.data.shape) < a_t1c).astype(np.float64)
    y_flair = (rng.random(u_true.data.shape) < a_flair).astype(np.float64)
    noise = rng.normal(0.0, theta_i_true.sigma, size=u_true.data.shape)
    y_pet = np.clip(theta_i_true.b * u_true.data + noise, 0.0, 1.0)

    sp = u_true.spacing_mm
    return Observation(
        y_t1c=ScalarField3D(y_t1c, sp),
        y_flair=ScalarField3D(y_flair, sp),
        y_pet=ScalarField3D(y_pet, sp),
        roi_mask=roi,
    )


def save_observation(obs: Observation, out_dir, name: str = "obs") -> Path:
    """Write the triplet and roi as volume files plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sp = obs.y_t1c.spacing_mm
    save_volume(obs.y_t1c, out / f"{name}_t1c")
    save_volume(obs.y_flair, out / f"{name}_flair")
    save_volume(obs.y_pet, out / f"{name}_pet")
    save_volume(ScalarField3D(obs.roi_mask.astype(np.float64), sp), out / f"{name}_roi")
    manifest = {
        "version": 1,
        "t1c": f"{name}_t1c",
        "flair": f"{name}_flair",
        "pet": f"{name}_pet",
        "roi": f"{name}_roi",
    }
    mpath = out / f"{name}.json"
    mpath.write_text(json.dumps(manifest, indent=2))
    return mpath


def load_observation(manifest_path) -> Observation:
    mpath = Path(manifest_path)
    manifest = json.loads(mpath.read_text())
    base = mpath.parent
    return Observation(
        y_t1c=load_volume(base / manifest["t1c"]),
        y_flair=load_volume(base / manifest["flair"]),
        y_pet=load_volume(base / manifest["pet"]),
        roi_mask=load_volume(base / manifest["roi"]).data > 0.5,
    )
