"""Closed-form model of availability-aware association with harvesting BSs.

Every function here measures power in battery units (multiples of
``cfg.eps`` watts), so the battery state ``l`` and required powers live on
the same axis. The constants are rescaled once through
``IntensityConstants.upsilon_units``.

Battery states are the *broadcast* levels ``0..cfg.broadcast_levels``; with
no broadcast cost this is simply ``0..L``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .config import NetworkConfig
from .geometry import intensity_constants


class SolverFailure(RuntimeError):
    pass


class DomainError(ValueError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"fixed point not reached after {iterations} iterations (residual {residual:.3e})")


# ---------------------------------------------------------------------------
# availability geometry
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _ups_units(cfg: NetworkConfig) -> float:
    return intensity_constants(cfg).upsilon_units


def lambda_b_units(p, cfg: NetworkConfig, ups: float | None = None):
    """BS intensity below required power ``p`` (battery units)."""
    ups = _ups_units(cfg) if ups is None else ups
    return cfg.deployment.lambda_bs * ups * np.power(p, cfg.delta)


def lambda_mt_units(p, cfg: NetworkConfig, ups: float | None = None):
    ups = _ups_units(cfg) if ups is None else ups
    return cfg.lambda_mt_eff * ups * np.power(p, cfg.delta)


@lru_cache(maxsize=64)
def _load_coef(cfg: NetworkConfig) -> float:
    d = cfg.delta
    return cfg.lambda_mt_eff * _ups_units(cfg) * d / (d + 1.0)


def estimate_other_load(p, cfg: NetworkConfig):
    """Expected total power of all MTs cheaper than ``p`` for the same BS.

    Campbell's theorem over the displaced MT process; units in and out.
    """
    coef = _load_coef(cfg)
    if cfg.delta == 0.5:
        p = np.asarray(p, dtype=float)
        return coef * p * np.sqrt(p)
    return coef * np.power(p, cfg.delta + 1.0)


@dataclass(frozen=True)
class AvailabilityMap:
    """Largest admissible required power for each battery level.

    A BS broadcasting ``l`` units is available to an MT needing ``p`` iff
    ``g_A(p) <= l``, equivalently ``p <= p_cov[l]``.
    """

    p_cov: np.ndarray
    load_coef: float
    delta: float

    @property
    def levels(self) -> int:
        return len(self.p_cov) - 1

    def g_A(self, p):
        p = np.asarray(p, dtype=float)
        return p + self.load_coef * np.power(p, self.delta + 1.0)

    def l_star(self, p):
        """Lowest level at which a BS is available for required power ``p``.

        Returns ``levels + 1`` when no level suffices.
        """
        return np.searchsorted(self.p_cov, p, side="left")


def build_availability_map(cfg: NetworkConfig, tol: float = 1e-12) -> AvailabilityMap:
    coef = _load_coef(cfg)
    levels = np.arange(cfg.broadcast_levels + 1, dtype=float)
    amap = AvailabilityMap(levels.copy(), coef, cfg.delta)
    if coef == 0.0:
        return amap

    # g_A(p) >= p, so [0, l] brackets the root for every l
    lo = np.zeros_like(levels)
    hi = levels.copy()
    if not np.all(amap.g_A(hi) >= levels):
        raise SolverFailure("cannot bracket g_A inverse")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        ok = amap.g_A(mid) <= levels
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
        if np.max(hi - lo) <= tol:
            break
    else:
        raise SolverFailure("bisection did not reach tolerance")
    # lo always satisfies the availability test, so p_cov is admissible itself
    return AvailabilityMap(lo, coef, cfg.delta)


@dataclass(frozen=True)
class _Thinned:
    """Cumulative sums of ``v`` that make the available-BS intensity O(1) per point."""

    tail: np.ndarray  # tail[k] = sum_{l >= k} v_l, length L+2
    prefix: np.ndarray  # prefix[k] = sum_{l < k} v_l Lambda_B(p_cov[l]), length L+2
    lam_b_cov: np.ndarray


def _thin(v: np.ndarray, amap: AvailabilityMap, cfg: NetworkConfig, ups: float) -> _Thinned:
    v = np.asarray(v, dtype=float)
    if v.shape != amap.p_cov.shape:
        raise ValueError("battery vector does not match the availability map")
    tail = np.concatenate([np.cumsum(v[::-1])[::-1], [0.0]])
    lam_cov = lambda_b_units(amap.p_cov, cfg, ups)
    prefix = np.concatenate([[0.0], np.cumsum(v * lam_cov)])
    return _Thinned(tail, prefix, lam_cov)


def _lambda_available(p, k, th: _Thinned, cfg: NetworkConfig, ups: float):
    return th.prefix[k] + th.tail[k] * lambda_b_units(p, cfg, ups)


def available_bs_intensity(p, v, amap: AvailabilityMap, cfg: NetworkConfig):
    """Mean number of BSs available to a typical MT with required power <= ``p``."""
    ups = _ups_units(cfg)
    p = np.asarray(p, dtype=float)
    top = amap.p_cov[-1]
    if np.any(p < 0) or np.any(p > top * (1 + 1e-12) + 1e-15):
        raise DomainError(f"p must lie in [0, {top:.6g}]")
    p = np.minimum(p, top)
    k = amap.l_star(p)
    th = _thin(v, amap, cfg, ups)
    return _lambda_available(p, k, th, cfg, ups)


def association_prob(p, l: int, v, amap: AvailabilityMap, cfg: NetworkConfig):
    """Probability that a typical BS at level ``l`` is the cheapest available one for required power ``p``."""
    p = np.asarray(p, dtype=float)
    inside = p <= amap.p_cov[l]
    lam = available_bs_intensity(np.where(inside, p, 0.0), v, amap, cfg)
    return np.where(inside, np.exp(-lam), 0.0)


def _phi(x):
    """(1 - exp(-x)) / x with its limit 1 at x = 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = x > 1e-300
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


class _ServedIntensity:
    """Mean number of MTs served by a typical BS with required power <= p.

    Integrates ``dLambda_MT(p) exp(-Lambda_B^A(p))`` piecewise between the
    ``p_cov`` breakpoints, where the thinning factor is constant. Segments
    whose thinning factor is 0 take the continuous limit of the closed form.
    """

    def __init__(self, v, amap: AvailabilityMap, cfg: NetworkConfig):
        self.cfg = cfg
        self.amap = amap
        self.ups = _ups_units(cfg)
        self.th = _thin(v, amap, cfg, self.ups)
        self.ratio = cfg.lambda_mt_eff / cfg.deployment.lambda_bs
        pc = amap.p_cov
        lam_cov = self.th.lam_b_cov
        # Lambda_B^A at breakpoints, evaluated with l* = k for p_cov[k]
        k = np.arange(len(pc))
        self.lam_a_cov = self.th.prefix[k] + self.th.tail[k] * lam_cov
        d_lam = np.diff(lam_cov)
        seg = self.ratio * np.exp(-self.lam_a_cov[:-1]) * d_lam * _phi(self.th.tail[1:-1] * d_lam)
        self.at_cov = np.concatenate([[0.0], np.cumsum(seg)])

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        pc = self.amap.p_cov
        p = np.clip(p, 0.0, pc[-1])
        k = np.maximum(self.amap.l_star(p), 1)
        a = pc[k - 1]
        lam_p = lambda_b_units(p, self.cfg, self.ups)
        d_lam = np.maximum(lam_p - self.th.lam_b_cov[k - 1], 0.0)
        inc = self.ratio * np.exp(-self.lam_a_cov[k - 1]) * d_lam * _phi(self.th.tail[k] * d_lam)
        return np.where(p > 0, self.at_cov[k - 1] + inc, 0.0)


def served_mt_intensity(p, l: int, v, amap: AvailabilityMap, cfg: NetworkConfig):
    """Served-MT intensity for a typical BS at level ``l``.

    MTs above ``p_cov[l]`` are never associated, so the intensity is flat
    beyond that point.
    """
    fn = _ServedIntensity(v, amap, cfg)
    return fn(np.minimum(np.asarray(p, dtype=float), amap.p_cov[l]))


# ---------------------------------------------------------------------------
# compound sum of ceiled marks
# ---------------------------------------------------------------------------

_RESCALE_AT = 1e250


def _compound_rows(qc: np.ndarray, log_p0: np.ndarray, m_max: int, row_floor: np.ndarray | None = None):
    """Run the recursion ``P(m) = sum_q (q/m) C_q P(m-q)`` for many rows at once.

    ``qc[r, q]`` holds ``q * C_q`` (column 0 unused). Rows are evaluated in a
    scaled form and carry a log offset so intensities well above 700 do not
    overflow; ``log_p0`` is ``log P(0)`` per row. ``row_floor[r]`` lets the
    caller skip columns it will discard (entries with ``m > row_floor``).
    """
    n_rows, width = qc.shape
    qmax = width - 1
    out = np.zeros((n_rows, m_max + 1))
    out[:, 0] = 1.0
    offset = np.zeros(n_rows)
    first = 0
    for m in range(1, m_max + 1):
        if row_floor is not None:
            while first < n_rows and row_floor[first] < m:
                first += 1
            if first == n_rows:
                break
        lo = max(0, m - qmax)
        # out[:, m-q] for q = 1..min(m, qmax), paired with qc[:, q]
        hist = out[first:, lo:m][:, ::-1]
        qs = hist.shape[1]
        val = np.einsum("ij,ij->i", hist, qc[first:, 1:qs + 1]) / m
        out[first:, m] = val
        big = val > _RESCALE_AT
        if np.any(big):
            rows = np.nonzero(big)[0] + first
            out[rows, : m + 1] /= _RESCALE_AT
            offset[rows] += math.log(_RESCALE_AT)
    scale = offset + log_p0
    with np.errstate(under="ignore"):
        return out * np.exp(scale)[:, None]


def compound_sum_pmf(m_max: int, intensity: Callable, p_ceiling: int) -> np.ndarray:
    """pmf of ``sum ceil(p_j)`` over a Poisson process on ``(0, p_ceiling]``.

    ``intensity(p)`` is the mean number of points below ``p`` (nondecreasing,
    zero at 0). Entries ``0..m_max`` are returned.
    """
    if p_ceiling < 1:
        out = np.zeros(m_max + 1)
        out[0] = 1.0
        return out
    q = np.arange(p_ceiling + 1, dtype=float)
    lam = np.asarray([float(intensity(x)) for x in q])
    c = np.diff(lam)
    if np.any(c < -1e-12):
        raise ValueError("intensity must be nondecreasing")
    qc = np.zeros((1, p_ceiling + 1))
    qc[0, 1:] = q[1:] * np.maximum(c, 0.0)
    return _compound_rows(qc, np.array([-lam[-1]]), m_max)[0]


# ---------------------------------------------------------------------------
# battery chain
# ---------------------------------------------------------------------------

def harvest_pmf(cfg: NetworkConfig, tail: float = 1e-15):
    """Harvested units per slot: ``(units, probs)`` on multiples of the burst size.

    Arrival counts beyond the point where the Poisson tail drops below
    ``tail`` are folded into the last bin.
    """
    rate = cfg.harvest_rate_eff
    ne = cfg.harvest.burst_size
    if rate == 0:
        return np.array([0]), np.array([1.0])
    kmax = int(stats.poisson.ppf(1.0 - tail, rate))
    while stats.poisson.sf(kmax, rate) >= tail:
        kmax += 1
    k = np.arange(kmax + 1)
    probs = stats.poisson.pmf(k, rate)
    probs[-1] += stats.poisson.sf(kmax, rate)
    return k * ne, probs


def consumption_matrix(v, amap: AvailabilityMap, cfg: NetworkConfig, include_zero: bool = True) -> np.ndarray:
    """Row ``l`` is the pmf of units consumed in a slot by a BS broadcasting ``l``.

    ``include_zero=False`` conditions on at least one unit being consumed,
    which is the normalisation over ``m = 1..l``.
    """
    n = amap.levels
    served = _ServedIntensity(v, amap, cfg)
    pc = amap.p_cov
    ceil_cov = np.ceil(pc - 1e-12).astype(int)
    qmax = int(ceil_cov[-1])
    out = np.zeros((n + 1, n + 1))
    out[:, 0] = 1.0
    if qmax == 0 or cfg.lambda_mt_eff == 0:
        return out

    grid = np.arange(qmax + 1, dtype=float)
    u_grid = served(grid)
    lam = np.where(grid[None, :] < pc[:, None], u_grid[None, :], served.at_cov[:, None])
    qc = np.zeros((n + 1, qmax + 1))
    qc[:, 1:] = grid[1:] * np.maximum(np.diff(lam, axis=1), 0.0)
    rows = _compound_rows(qc, -served.at_cov, n, row_floor=np.arange(n + 1))
    mask = np.tril(np.ones((n + 1, n + 1), dtype=bool))
    rows = np.where(mask, rows, 0.0)
    if not include_zero:
        rows[:, 0] = 0.0
    total = rows.sum(axis=1)
    good = total > 0
    out[good] = rows[good] / total[good, None]
    # rows with no admissible mass (e.g. level 0) consume nothing
    return out


def consumption_pmf(l: int, v, amap: AvailabilityMap, cfg: NetworkConfig, include_zero: bool = True) -> np.ndarray:
    return consumption_matrix(v, amap, cfg, include_zero)[l, : l + 1]


def harvest_shift_matrix(harvest, n: int, broadcast_cost: int = 0) -> np.ndarray:
    """``M[x, y]``: probability that ``x`` units left after serving become broadcast level ``y``.

    Levels are clipped to ``0..n``; the clip at the top models overflow of
    the finite battery.
    """
    units, probs = harvest
    x = np.arange(n + 1)
    y = np.clip(x[:, None] + np.asarray(units)[None, :] - broadcast_cost, 0, n)
    out = np.zeros((n + 1, n + 1))
    np.add.at(out, (np.broadcast_to(x[:, None], y.shape), y), np.broadcast_to(probs, y.shape))
    return out


def transition_matrix(consumption: np.ndarray, harvest, cfg: NetworkConfig, shift: np.ndarray | None = None) -> np.ndarray:
    """Battery transition matrix from consumption rows and the harvest pmf.

    The next broadcast level is ``clip(l - m + h - P_BC, 0, L - P_BC)``.
    ``shift`` may carry a precomputed :func:`harvest_shift_matrix`.
    """
    n = consumption.shape[0] - 1
    if shift is None:
        shift = harvest_shift_matrix(harvest, n, cfg.battery.broadcast_cost_units)
    li, xi = np.tril_indices(n + 1)
    remain = np.zeros_like(consumption)
    remain[li, xi] = consumption[li, li - xi]
    return remain @ shift


@dataclass(frozen=True)
class StationarySolution:
    v: np.ndarray
    iterations: int
    residual: float
    availability: AvailabilityMap
    consumption: np.ndarray
    transition: np.ndarray


def solve_stationary(
    cfg: NetworkConfig,
    include_zero: bool = True,
    tol: float = 1e-10,
    max_iter: int = 500,
    damping: float = 0.0,
) -> StationarySolution:
    """Self-consistent battery distribution by fixed-point iteration.

    Starts from equiprobable levels; each pass rebuilds the available-BS
    intensity, served-MT intensities, consumption pmfs and transition
    matrix from the current ``v`` and sets ``v <- v P``. Stops once the mean
    squared change falls to ``tol``.
    """
    amap = build_availability_map(cfg)
    n = amap.levels
    harvest = harvest_pmf(cfg)
    shift = harvest_shift_matrix(harvest, n, cfg.battery.broadcast_cost_units)
    v = np.full(n + 1, 1.0 / (n + 1))
    it = 0
    while True:
        cons = consumption_matrix(v, amap, cfg, include_zero)
        trans = transition_matrix(cons, harvest, cfg, shift)
        vp = v @ trans
        resid = float(np.mean((v - vp) ** 2))
        new = (1.0 - damping) * vp + damping * v
        v = new / new.sum()
        it += 1
        if resid <= tol:
            # hand back operators built from the returned v, not its predecessor
            cons = consumption_matrix(v, amap, cfg, include_zero)
            trans = transition_matrix(cons, harvest, cfg, shift)
            return StationarySolution(v, it, resid, amap, cons, trans)
        if it >= max_iter:
            raise NonConvergence(it, resid)


# ---------------------------------------------------------------------------
# performance
# ---------------------------------------------------------------------------

def outage_probability(v, amap: AvailabilityMap, cfg: NetworkConfig) -> float:
    """Probability that a typical MT finds no available BS."""
    lam = available_bs_intensity(amap.p_cov[-1], v, amap, cfg)
    return float(np.exp(-lam))


def tail_integral(u0, alpha: float, method: str = "auto"):
    """``int_{u0}^inf u^(2/alpha - 1) / (1 + u) du``.

    ``method="closed"`` uses ``pi - 2 atan(sqrt(u0))`` and is only valid
    for alpha = 4; ``"quad"`` integrates adaptively after mapping
    ``t = u / (1 + u)`` onto ``[t0, 1)``.
    """
    d = 2.0 / alpha
    u0 = np.asarray(u0, dtype=float)
    if method == "auto":
        method = "closed" if alpha == 4.0 else "quad"
    if method == "closed":
        if alpha != 4.0:
            raise ValueError("closed form needs alpha = 4")
        return np.pi - 2.0 * np.arctan(np.sqrt(u0))
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")

    flat = u0.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.empty_like(uniq)
    for i, u in enumerate(uniq):
        if u == 0.0:
            # integrand t^(d-1) (1-t)^(-d) entirely in the weight
            vals[i] = integrate.quad(lambda t: 1.0, 0.0, 1.0, weight="alg", wvar=(d - 1.0, -d))[0]
        elif np.isinf(u):
            vals[i] = 0.0
        else:
            t0 = u / (1.0 + u)
            vals[i] = integrate.quad(lambda t: t ** (d - 1.0), t0, 1.0, weight="alg", wvar=(0.0, -d),
                                     epsabs=1e-13, epsrel=1e-12)[0]
    return vals[inv].reshape(u0.shape)


def coverage_probability(threshold, v, consumption: np.ndarray, amap: AvailabilityMap, cfg: NetworkConfig,
                         rho_floor: float = 1e-14, method: str = "auto"):
    """SIR coverage for linear threshold(s) ``threshold``.

    Interferers are split by (consumed units ``m``, battery level ``l``);
    each class is a thinned PPP transmitting ``m / N_RB`` per resource block.
    """
    t = np.atleast_1d(np.asarray(threshold, dtype=float))
    if np.any(t <= 0):
        raise ValueError("threshold must be > 0")
    n = amap.levels
    v = np.asarray(v, dtype=float)
    consts = intensity_constants(cfg)
    ls, ms = np.nonzero(np.tril(np.ones((n + 1, n + 1), dtype=bool), k=0))
    keep = ms >= 1
    ls, ms = ls[keep], ms[keep]
    rho = v[ls] * consumption[ls, ms]
    keep = rho >= rho_floor
    ls, ms, rho = ls[keep], ms[keep], rho[keep]
    n_rb = cfg.deployment.n_rb
    ratio = np.minimum(1.0, amap.p_cov[ls] * n_rb / ms)
    weight = rho * consts.upsilon_m[ms]
    d = cfg.delta
    pref = cfg.deployment.lambda_bs * d
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        u0 = ratio / ti
        integ = tail_integral(u0, cfg.channel.alpha, method)
        expo = pref * (ti / cfg.deployment.p_rx_watts) ** d * np.sum(weight * integ)
        out[i] = math.exp(-expo)
    return out if np.ndim(threshold) else float(out[0])


@dataclass(frozen=True)
class AnalyticReport:
    solution: StationarySolution
    outage: float
    threshold_db: np.ndarray
    coverage: np.ndarray


def analyze(cfg: NetworkConfig, threshold_db=(-5.0, 0.0, 5.0, 10.0, 15.0), include_zero: bool = True,
            **solver_kw) -> AnalyticReport:
    sol = solve_stationary(cfg, include_zero=include_zero, **solver_kw)
    t_db = np.asarray(threshold_db, dtype=float)
    out = outage_probability(sol.v, sol.availability, cfg)
    cov = coverage_probability(10 ** (t_db / 10), sol.v, sol.consumption, sol.availability, cfg) if t_db.size else np.array([])
    return AnalyticReport(sol, out, t_db, np.atleast_1d(cov))
