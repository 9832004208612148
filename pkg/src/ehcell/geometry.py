"""PPP sampling on a torus window and displaced-process intensities.

A PPP of BSs seen through the required-power map ``p = P_Rx kappa r^alpha / chi``
is again Poisson on the half-line, with mean count ``lambda * Upsilon * p^(2/alpha)``
below ``p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ZETA, NetworkConfig


@dataclass(frozen=True)
class Window:
    """Square ``[-radius_m, radius_m)^2`` with wrap-around edges."""

    radius_m: float

    @property
    def side(self) -> float:
        return 2.0 * self.radius_m

    @property
    def area(self) -> float:
        return self.side**2

    @classmethod
    def for_config(cls, cfg: NetworkConfig) -> "Window":
        return cls(cfg.window_radius)


def sample_ppp(density: float, window: Window, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous PPP in ``window``; returns an ``(n, 2)`` array of positions."""
    if density < 0:
        raise ValueError("density must be >= 0")
    n = rng.poisson(density * window.area) if density > 0 else 0
    return rng.uniform(-window.radius_m, window.radius_m, size=(n, 2))


def torus_distance(a: np.ndarray, b: np.ndarray, window: Window) -> np.ndarray:
    """Pairwise wrap-around distances, shape ``(len(a), len(b))``."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    side = window.side
    d2 = np.zeros((a.shape[0], b.shape[0]))
    for axis in (0, 1):
        d = np.abs(a[:, axis, None] - b[None, :, axis])
        d = np.minimum(d, side - d)
        d2 += d * d
    return np.sqrt(d2)


def draw_shadowing(shape, cfg: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """Log-normal shadowing gains chi with ``10 log10 chi ~ N(mu_db, sigma_db)``."""
    c = cfg.channel
    x_db = rng.normal(c.mu_db, c.sigma_db, size=shape) if c.sigma_db > 0 else np.full(shape, c.mu_db)
    return np.exp(x_db / ZETA)


def required_power(distance_m, chi, cfg: NetworkConfig):
    """Transmit power (W) meeting the received-power target: ``P_Rx kappa r^alpha / chi``."""
    c = cfg.channel
    return cfg.deployment.p_rx_watts * c.kappa * np.power(distance_m, c.alpha) / chi


def required_units(mt_xy: np.ndarray, bs_xy: np.ndarray, window: Window, cfg: NetworkConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Required power in battery units for every MT-BS pair, with fresh shadowing.

    Same law and random stream as
    ``required_power(torus_distance(...), draw_shadowing(...)) / eps``.
    """
    from ._kernels import pair_units

    c = cfg.channel
    mt_xy = np.ascontiguousarray(mt_xy, dtype=float).reshape(-1, 2)
    bs_xy = np.ascontiguousarray(bs_xy, dtype=float).reshape(-1, 2)
    z = rng.standard_normal((len(mt_xy), len(bs_xy)))
    z *= -c.sigma_db / ZETA
    np.exp(z, out=z)
    scale = cfg.deployment.p_rx_watts * c.kappa * math.exp(-c.mu_db / ZETA) / cfg.eps
    return pair_units(mt_xy, bs_xy, window.side, z, scale, 0.5 * c.alpha)


def lognormal_frac_moment(mu_db: float, sigma_db: float, alpha: float) -> float:
    """``E[chi^(2/alpha)]`` for dB-normal shadowing."""
    if alpha <= 2:
        raise ValueError("alpha must be > 2")
    s = (2.0 / alpha) / ZETA
    return math.exp(s * mu_db + 0.5 * s * s * sigma_db * sigma_db)


@dataclass(frozen=True)
class IntensityConstants:
    upsilon: float  # W^(-2/alpha)
    upsilon_units: float  # same constant with power counted in battery units
    upsilon_m: np.ndarray  # index m = 0..L, interferer transmitting m units
    zeta: float = ZETA


def intensity_constants(cfg: NetworkConfig) -> IntensityConstants:
    c, d = cfg.channel, cfg.deployment
    delta = cfg.delta
    moment = lognormal_frac_moment(c.mu_db, c.sigma_db, c.alpha)
    upsilon = math.pi * (1.0 / (d.p_rx_watts * c.kappa)) ** delta * moment
    m = np.arange(cfg.levels + 1, dtype=float)
    upsilon_m = math.pi * (m * cfg.eps / (c.kappa * d.n_rb)) ** delta * moment
    return IntensityConstants(upsilon, upsilon * cfg.eps**delta, upsilon_m)


def intensity_mt(p_watts, cfg: NetworkConfig):
    """Mean number of MTs needing at most ``p_watts`` from a typical BS."""
    ups = intensity_constants(cfg).upsilon
    return cfg.lambda_mt_eff * ups * np.power(p_watts, cfg.delta)


def intensity_bs(p_watts, cfg: NetworkConfig):
    """Mean number of BSs able to reach a typical MT with at most ``p_watts``."""
    ups = intensity_constants(cfg).upsilon
    return cfg.deployment.lambda_bs * ups * np.power(p_watts, cfg.delta)
