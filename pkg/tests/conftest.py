import numpy as np
from scipy.special import expit

from sbps.data import Dataset


def random_small_dataset(rng, R=None, n_per_group=None, K=None):
    """Well-formed dataset with modest subgroup effects on treatment.

    Sized for exhaustive scope searches (R <= 6), with both arms forced
    nonempty in every subgroup.
    """
    R = R if R is not None else int(rng.integers(2, 7))
    n_per_group = n_per_group if n_per_group is not None else int(rng.integers(16, 36))
    K = K if K is not None else int(rng.integers(1, 4))
    g = np.repeat(np.arange(1, R + 1), n_per_group)
    n = len(g)
    x = rng.normal(size=(n, K))
    coef = rng.normal(scale=0.7, size=K)
    logit = 0.4 * (g - (R + 1) / 2) + x @ coef + 0.3 * rng.standard_normal(n)
    z = (rng.uniform(size=n) < expit(logit)).astype(int)
    for r in range(1, R + 1):
        pos = np.nonzero(g == r)[0]
        z[pos[0]], z[pos[1]] = 1, 0
    y = 50.0 + g * 2.0 * z + x @ rng.normal(scale=2.0, size=K) \
        + rng.standard_normal(n)
    return Dataset(z=z, g=g, x=x, y=y, R=R)
