import numpy as np
import pytest

from binq import Role, WeightMatrix


def gaussian_matrix(seed, shape=(64, 64), sigma=1.0, mu=0.0,
                    role=Role.LANGUAGE, name="layer"):
    rng = np.random.default_rng(seed)
    data = rng.normal(mu, sigma, shape).astype(np.float32)
    return WeightMatrix(name=name, role=role, data=data)


def outlier_matrix(seed, shape=(128, 128), sigma=0.02, frac=0.01,
                   magnitude=10.0, spread=0.0, role=Role.LANGUAGE,
                   name="layer"):
    """Gaussian bulk with a fraction of entries replaced by +/- outliers.

    magnitude is in units of the bulk sigma; spread > 0 draws magnitudes
    uniformly from [magnitude - spread, magnitude + spread].
    """
    rng = np.random.default_rng(seed)
    data = rng.normal(0.0, sigma, shape)
    count = int(round(data.size * frac))
    idx = rng.choice(data.size, count, replace=False)
    mags = rng.uniform(magnitude - spread, magnitude + spread, count) * sigma
    data.ravel()[idx] = mags * rng.choice([-1.0, 1.0], count)
    return WeightMatrix(name=name, role=role, data=data.astype(np.float32))


def straddling_outlier_matrix(seed, shape=(96, 96), sigma=0.02, frac=0.03,
                              role=Role.LANGUAGE, name="layer"):
    """Outliers placed between the 5% and 1% saliency cutoffs.

    Magnitudes land around 2.2-2.55 of the inflated standard deviation, so
    a 1% saliency threshold leaves them in the outermost unsalient subset
    while a 5% threshold isolates them.
    """
    rng = np.random.default_rng(seed)
    data = rng.normal(0.0, sigma, shape)
    count = int(round(data.size * frac))
    idx = rng.choice(data.size, count, replace=False)
    # Fixed point of sigma-hat inflation for u ~ U[2.2, 2.55].
    e_u2 = (2.2 ** 2 + 2.2 * 2.55 + 2.55 ** 2) / 3.0
    sigma_hat = sigma * np.sqrt((1.0 - frac) / (1.0 - frac * e_u2))
    mags = rng.uniform(2.2, 2.55, count) * sigma_hat
    data.ravel()[idx] = mags * rng.choice([-1.0, 1.0], count)
    return WeightMatrix(name=name, role=role, data=data.astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
