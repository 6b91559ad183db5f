import math

import numpy as np
import pytest

from gliosim.imaging import (
    ALPHA_EPS,
    ImagingParams,
    Observation,
    alpha,
    load_observation,
    loglik_mri,
    loglik_pet,
    save_observation,
    synth_observation,
    total_loglik,
)
from gliosim.volumes import ScalarField3D, gen_phantom


# --- brute-force oracles: per-voxel python loops, exact summation ---------


def oracle_alpha(u, u_c, sa):
    d = u - u_c
    s = 0.0 if d == 0 else math.copysign(1.0, d)
    a = 0.5 + 0.5 * s * (1.0 - math.exp(-(d * d) / (sa * sa)))
    return min(max(a, ALPHA_EPS), 1.0 - ALPHA_EPS)


def oracle_mri(y, u, u_c, sa, roi):
    terms = []
    for yi, ui, m in zip(y.ravel(), u.ravel(), roi.ravel()):
        if not m:
            continue
        a = oracle_alpha(ui, u_c, sa)
        terms.append(yi * math.log(a) + (1.0 - yi) * math.log(1.0 - a))
    return math.fsum(terms)


def oracle_pet(y, u, b, sigma, roi):
    terms = []
    for yi, ui, m in zip(y.ravel(), u.ravel(), roi.ravel()):
        if not m:
            continue
        terms.append(-math.log(sigma * math.sqrt(2 * math.pi)) - (yi - b * ui) ** 2 / (2 * sigma**2))
    return math.fsum(terms)


def random_instance(rng, n=4):
    u = ScalarField3D(rng.random((n, n, n)))
    y_t1c = ScalarField3D((rng.random((n, n, n)) < 0.5).astype(float))
    y_flair = ScalarField3D((rng.random((n, n, n)) < 0.5).astype(float))
    y_pet = ScalarField3D(rng.random((n, n, n)))
    roi = rng.random((n, n, n)) < 0.8
    roi[0, 0, 0] = True  # keep the roi nonempty
    theta = ImagingParams(
        uc_t1c=rng.uniform(0.6, 0.8),
        uc_flair=rng.uniform(0.05, 0.6),
        sigma_alpha=rng.uniform(0.05, 0.08),
        b=rng.uniform(0.6, 1.02),
        sigma=rng.uniform(0.01, 0.25),
    )
    obs = Observation(y_t1c=y_t1c, y_flair=y_flair, y_pet=y_pet, roi_mask=roi)
    return obs, u, theta


class TestAlpha:
    def test_at_threshold(self):
        assert alpha(0.3, 0.3, 0.06) == 0.5

    def test_saturation_clamped(self):
        a = alpha(0.7 + 10 * 0.06, 0.7, 0.06)
        assert a == 1.0 - ALPHA_EPS
        assert alpha(0.7 - 10 * 0.06, 0.7, 0.06) == ALPHA_EPS

    def test_symmetry(self):
        for delta in (0.005, 0.02, 0.05):
            s = alpha(0.5 + delta, 0.5, 0.06) + alpha(0.5 - delta, 0.5, 0.06)
            assert s == pytest.approx(1.0, abs=1e-14)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            u = rng.random()
            uc = rng.uniform(0.05, 0.8)
            sa = rng.uniform(0.05, 0.08)
            assert float(alpha(u, uc, sa)) == pytest.approx(oracle_alpha(u, uc, sa), abs=1e-15)


class TestMriLoglik:
    def test_all_half(self):
        n = 4
        u = ScalarField3D(np.full((n, n, n), 0.3))  # exactly at threshold
        y = ScalarField3D(np.ones((n, n, n)))
        roi = np.ones((n, n, n), dtype=bool)
        ll = loglik_mri(y, u, 0.3, 0.06, roi)
        assert ll == pytest.approx(n**3 * math.log(0.5), rel=1e-12)

    def test_perfect_agreement_near_zero(self):
        n = 4
        u = ScalarField3D(np.full((n, n, n), 0.9))
        y = ScalarField3D(np.ones((n, n, n)))
        roi = np.ones((n, n, n), dtype=bool)
        ll = loglik_mri(y, u, 0.2, 0.05, roi)
        assert -1e-4 < ll <= 0.0

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            obs, u, theta = random_instance(rng)
            got = loglik_mri(obs.y_t1c, u, theta.uc_t1c, theta.sigma_alpha, obs.roi_mask)
            want = oracle_mri(obs.y_t1c.data, u.data, theta.uc_t1c, theta.sigma_alpha, obs.roi_mask)
            assert got == pytest.approx(want, abs=1e-12)

    def test_monotone_for_positive_labels(self):
        n = 3
        y = ScalarField3D(np.ones((n, n, n)))
        roi = np.ones((n, n, n), dtype=bool)
        lls = []
        for lvl in (0.1, 0.3, 0.5, 0.7, 0.9):
            u = ScalarField3D(np.full((n, n, n), lvl))
            lls.append(loglik_mri(y, u, 0.5, 0.06, roi))
        assert all(b >= a for a, b in zip(lls, lls[1:]))


class TestPetLoglik:
    def test_exact_fit(self):
        n = 4
        u = ScalarField3D(np.random.default_rng(2).random((n, n, n)))
        y = ScalarField3D(np.clip(0.8 * u.data, 0, 1))
        roi = np.ones((n, n, n), dtype=bool)
        ll = loglik_pet(y, u, b=0.8, sigma=0.05, roi=roi)
        assert ll == pytest.approx(-(n**3) * math.log(0.05 * math.sqrt(2 * math.pi)), rel=1e-12)

    def test_single_voxel_one_sigma(self):
        u = ScalarField3D(np.array([[[0.5]]]))
        y = ScalarField3D(np.array([[[0.5 * 0.8 + 0.05]]]))
        roi = np.ones((1, 1, 1), dtype=bool)
        ll = loglik_pet(y, u, b=0.8, sigma=0.05, roi=roi)
        assert ll == pytest.approx(-math.log(0.05 * math.sqrt(2 * math.pi)) - 0.5, rel=1e-12)

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            obs, u, theta = random_instance(rng)
            got = loglik_pet(obs.y_pet, u, theta.b, theta.sigma, obs.roi_mask)
            want = oracle_pet(obs.y_pet.data, u.data, theta.b, theta.sigma, obs.roi_mask)
            assert got == pytest.approx(want, abs=1e-12)


class TestTotalLoglik:
    def test_additivity(self):
        rng = np.random.default_rng(4)
        obs, u, theta = random_instance(rng)
        total = total_loglik(obs, u, theta)
        parts = (
            loglik_mri(obs.y_t1c, u, theta.uc_t1c, theta.sigma_alpha, obs.roi_mask)
            + loglik_mri(obs.y_flair, u, theta.uc_flair, theta.sigma_alpha, obs.roi_mask)
            + loglik_pet(obs.y_pet, u, theta.b, theta.sigma, obs.roi_mask)
        )
        assert total == pytest.approx(parts, rel=1e-15)

    def test_mirror_doubles(self):
        rng = np.random.default_rng(5)
        obs, u, theta = random_instance(rng)

        def mirror(arr):
            return np.concatenate([arr, arr[::-1]], axis=0)

        obs2 = Observation(
            y_t1c=ScalarField3D(mirror(obs.y_t1c.data)),
            y_flair=ScalarField3D(mirror(obs.y_flair.data)),
            y_pet=ScalarField3D(mirror(obs.y_pet.data)),
            roi_mask=mirror(obs.roi_mask),
        )
        u2 = ScalarField3D(mirror(u.data))
        assert total_loglik(obs2, u2, theta) == pytest.approx(2 * total_loglik(obs, u, theta), rel=1e-12)

    def test_monolithic_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            obs, u, theta = random_instance(rng)
            want = (
                oracle_mri(obs.y_t1c.data, u.data, theta.uc_t1c, theta.sigma_alpha, obs.roi_mask)
                + oracle_mri(obs.y_flair.data, u.data, theta.uc_flair, theta.sigma_alpha, obs.roi_mask)
                + oracle_pet(obs.y_pet.data, u.data, theta.b, theta.sigma, obs.roi_mask)
            )
            assert total_loglik(obs, u, theta) == pytest.approx(want, abs=1e-12)

    def test_finite_for_valid_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            obs, u, theta = random_instance(rng)
            assert math.isfinite(total_loglik(obs, u, theta))


class TestSynthObservation:
    def _setup(self, seed=0):
        a = gen_phantom((20, 20, 20), 2.0, rng_seed=1)
        rng = np.random.default_rng(seed)
        u = ScalarField3D(np.clip(rng.random((20, 20, 20)), 0, 1), 2.0)
        return a, u

    def test_determinism(self):
        a, u = self._setup()
        theta = ImagingParams(uc_t1c=0.7, uc_flair=0.25, sigma_alpha=0.06, b=0.8, sigma=0.05)
        o1 = synth_observation(u, theta, a, rng_seed=9)
        o2 = synth_observation(u, theta, a, rng_seed=9)
        np.testing.assert_array_equal(o1.y_t1c.data, o2.y_t1c.data)
        np.testing.assert_array_equal(o1.y_pet.data, o2.y_pet.data)

    def test_hard_threshold_limit(self):
        a, u = self._setup()
        theta = ImagingParams(uc_t1c=0.7, uc_flair=0.25, sigma_alpha=1e-9, b=0.8, sigma=1e-12)
        obs = synth_observation(u, theta, a, rng_seed=10)
        np.testing.assert_array_equal(obs.y_t1c.data, (u.data > 0.7).astype(float))
        np.testing.assert_array_equal(obs.y_flair.data, (u.data > 0.25).astype(float))
        np.testing.assert_allclose(obs.y_pet.data, np.clip(0.8 * u.data, 0, 1), atol=1e-9)

    def test_threshold_recovered_by_grid_search(self):
        # generative/evaluative self-consistency: with data generated at a
        # hard threshold t, the likelihood over u_c peaks at u_c = t
        a = gen_phantom((16, 16, 16), 2.0, rng_seed=2)
        rng = np.random.default_rng(11)
        u = ScalarField3D(rng.random((16, 16, 16)), 2.0)
        t_true = 0.42
        theta_gen = ImagingParams(uc_t1c=t_true, uc_flair=t_true, sigma_alpha=1e-9, b=0.8, sigma=0.05)
        obs = synth_observation(u, theta_gen, a, rng_seed=12)
        grid = np.linspace(0.15, 0.7, 111)
        lls = [loglik_mri(obs.y_t1c, u, float(uc), 0.03, obs.roi_mask) for uc in grid]
        assert grid[int(np.argmax(lls))] == pytest.approx(t_true, abs=0.01)

    def test_round_trip_io(self, tmp_path):
        a, u = self._setup()
        theta = ImagingParams(uc_t1c=0.7, uc_flair=0.25, sigma_alpha=0.06, b=0.8, sigma=0.05)
        obs = synth_observation(u, theta, a, rng_seed=13)
        manifest = save_observation(obs, tmp_path)
        back = load_observation(manifest)
        np.testing.assert_array_equal(back.y_t1c.data, obs.y_t1c.data)
        np.testing.assert_array_equal(back.roi_mask, obs.roi_mask)
        np.testing.assert_allclose(back.y_pet.data, obs.y_pet.data, atol=1e-7)
