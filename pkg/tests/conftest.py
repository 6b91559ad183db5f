import numpy as np


def gaussian_box_moments(mu, sd, lo=0.0, hi=1.0, n_grid=400_001):
    """Quadrature oracle: mean and SD of a density proportional to a
    Gaussian restricted to [lo, hi]."""
    xs = np.linspace(lo, hi, n_grid)
    w = np.exp(-((xs - mu) ** 2) / (2.0 * sd * sd))
    z = np.trapezoid(w, xs)
    mean = np.trapezoid(xs * w, xs) / z
    var = np.trapezoid((xs - mean) ** 2 * w, xs) / z
    return mean, float(np.sqrt(var))
