"""Binary activation signals from a thresholded Gaussian AR(1) process."""
from __future__ import annotations

import numpy as np
from scipy.stats import norm


def synthesize_activation(rate: float, rho: float, T: int, seed=None, n: int | None = None,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Binary series with marginal ``rate`` and lag-1 tetrachoric correlation ``rho``.

    The latent process is a stationary AR(1) with coefficient ``rho``, so its
    lag-1 correlation, which is the tetrachoric correlation of the
    thresholded series, equals ``rho`` exactly.  Returns shape ``(T,)`` or
    ``(n, T)`` when ``n`` is given.
    """
    if not 0 < rate < 1:
        raise ValueError("activation rate must lie in (0, 1)")
    if not 0 <= rho < 1:
        raise ValueError("lag-1 correlation must lie in [0, 1)")
    if T < 1:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(seed) if rng is None else rng
    rows = 1 if n is None else n
    eps = rng.standard_normal((rows, T))
    z = np.empty_like(eps)
    z[:, 0] = eps[:, 0]
    scale = np.sqrt(1 - rho ** 2)
    for t in range(1, T):
        z[:, t] = rho * z[:, t - 1] + scale * eps[:, t]
    a = (z > norm.ppf(1 - rate)).astype(float)
    return a[0] if n is None else a
