import numpy as np
import pytest
from scipy.stats import ks_2samp

from kcpd.distributions import (
    DistributionSpec,
    exponential,
    gaussian,
    gaussian_mixture,
    laplace,
    sample,
    uniform,
)


def test_gaussian_mean_near_zero():
    n = 5000
    x = sample(gaussian(2), n, seed=1)
    assert x.shape == (n, 2)
    assert np.all(np.abs(x.mean(axis=0)) < 4 / np.sqrt(n))


def test_mixture_with_unit_weight_matches_first_component():
    mix = gaussian_mixture(1, [(1.0, 0.0, 1.0), (0.0, 5.0, 9.0)])
    a = sample(mix, 3000, seed=2)[:, 0]
    b = sample(gaussian(1), 3000, seed=3)[:, 0]
    assert ks_2samp(a, b).pvalue > 0.01


def test_mixture_moments():
    mix = gaussian_mixture(3, [(0.3, 0.0, 1.0), (0.7, 2.0, 9.0)])
    x = sample(mix, 40000, seed=4)
    assert x.mean() == pytest.approx(1.4, abs=0.05)
    assert x.var() == pytest.approx(0.3 * 1 + 0.7 * 9 + 0.3 * 0.7 * 4, rel=0.03)


def test_uniform_support():
    a, b = 1.0, 0.5
    x = sample(uniform(4, a - b, a + b), 2000, seed=5)
    assert np.all((x >= a - b) & (x <= a + b))


def test_laplace_and_exponential_scales():
    x = sample(laplace(1, loc=1.0, scale=2.0), 20000, seed=6)
    assert np.median(x) == pytest.approx(1.0, abs=0.08)
    assert np.mean(np.abs(x - 1.0)) == pytest.approx(2.0, rel=0.05)
    e = sample(exponential(2, scale=3.0), 20000, seed=7)
    assert e.min() >= 0 and e.mean() == pytest.approx(3.0, rel=0.05)


def test_reproducible_and_generator_seed():
    a = sample(gaussian(3), 10, seed=[1, 2])
    np.testing.assert_array_equal(a, sample(gaussian(3), 10, seed=[1, 2]))
    g = np.random.default_rng(0)
    assert sample(gaussian(3), 4, g).shape == (4, 3)


def test_bootstrap_from_array():
    data = np.arange(10.0).reshape(5, 2)
    x = sample(data, 50, seed=0)
    assert set(map(tuple, x)) <= set(map(tuple, data))


@pytest.mark.parametrize("bad", [
    lambda: DistributionSpec("cauchy", 2),
    lambda: DistributionSpec("gaussian", 0),
    lambda: gaussian(2, var=-1.0),
    lambda: gaussian_mixture(2, [(0.5, 0, 1), (0.4, 1, 1)]),
    lambda: gaussian_mixture(2, [(1.2, 0, 1), (-0.2, 1, 1)]),
    lambda: uniform(2, 1.0, 1.0),
    lambda: laplace(2, scale=0.0),
    lambda: exponential(2, scale=-1.0),
    lambda: gaussian(2, mean=[0, 0, 0]),
    lambda: sample(gaussian(2), 0),
])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        bad()


def test_spec_dict_roundtrip():
    s = gaussian_mixture(3, [(0.3, 0.0, 1.0), (0.7, 2.0, 9.0)])
    assert DistributionSpec.from_dict(s.to_dict()) == s
