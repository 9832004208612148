"""Slot-level Monte-Carlo simulation of harvesting BSs and association schemes.

Each slot redraws the MT process and all per-pair shadowing; BS positions
are drawn once per trial and batteries evolve across slots. Powers are
handled in battery units throughout (``cfg.eps`` watts each).
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .analytic import estimate_other_load
from .config import NetworkConfig, SchemePolicy, db_to_linear
from .geometry import Window, draw_shadowing, required_power, required_units, sample_ppp, torus_distance

NONE = _kernels.NONE


@dataclass
class NetworkState:
    bs_xy: np.ndarray
    battery: np.ndarray  # int64 units in 0..L
    window: Window

    @classmethod
    def initial(cls, cfg: NetworkConfig, rng: np.random.Generator) -> "NetworkState":
        window = Window.for_config(cfg)
        xy = sample_ppp(cfg.deployment.lambda_bs, window, rng)
        battery = rng.integers(0, cfg.levels + 1, size=len(xy)).astype(np.int64)
        return cls(xy, battery, window)

    @property
    def n_bs(self) -> int:
        return len(self.bs_xy)


@dataclass
class SlotOutcome:
    battery_start: np.ndarray
    broadcast: np.ndarray
    harvested: np.ndarray
    consumed: np.ndarray  # units drawn from each battery
    battery_end: np.ndarray
    required: np.ndarray  # (n_mt, n_bs) required power in units
    assoc: np.ndarray  # BS index or NONE
    served: np.ndarray
    rejected: np.ndarray
    sir: np.ndarray | None = None  # linear, NaN where not served

    @property
    def n_mt(self) -> int:
        return self.required.shape[0]


@dataclass
class TrialEstimate:
    """Pooled counts from one or more trials.

    Standard errors are binomial, ``sqrt(p (1 - p) / n)``, over MT samples.
    ``trial_outage`` keeps the per-trial estimates so between-trial spread
    can be inspected separately.
    """

    thresholds_db: tuple = ()
    mts: int = 0
    served: int = 0
    associated: int = 0
    rejected: int = 0
    sir_samples: int = 0
    coverage_hits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    battery_hist: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    slots: int = 0
    trial_outage: list = field(default_factory=list)

    @staticmethod
    def _ratio(k, n):
        return k / n if n else float("nan")

    @staticmethod
    def _stderr(p, n):
        return float(np.sqrt(p * (1.0 - p) / n)) if n else float("nan")

    @property
    def trials(self) -> int:
        return len(self.trial_outage)

    @property
    def outage_prob(self) -> float:
        return self._ratio(self.mts - self.served, self.mts)

    @property
    def outage_stderr(self) -> float:
        return self._stderr(self.outage_prob, self.mts)

    @property
    def outage_trial_stderr(self) -> float:
        x = np.asarray([o for o in self.trial_outage if np.isfinite(o)])
        return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")

    @property
    def rejection_prob(self) -> float:
        return self._ratio(self.rejected, self.associated) if self.associated else 0.0

    @property
    def rejection_stderr(self) -> float:
        return self._stderr(self.rejection_prob, self.associated)

    @property
    def coverage(self) -> np.ndarray:
        if not self.sir_samples:
            return np.full(len(self.thresholds_db), np.nan)
        return self.coverage_hits / self.sir_samples

    @property
    def coverage_stderr(self) -> np.ndarray:
        c = self.coverage
        return np.sqrt(c * (1 - c) / self.sir_samples) if self.sir_samples else c

    def battery_pmf(self) -> np.ndarray:
        total = self.battery_hist.sum()
        return self.battery_hist / total if total else self.battery_hist.astype(float)

    def merge(self, other: "TrialEstimate") -> "TrialEstimate":
        if tuple(self.thresholds_db) != tuple(other.thresholds_db):
            raise ValueError("threshold grids differ")
        if self.battery_hist.size == 0:
            hist = other.battery_hist.copy()
        elif other.battery_hist.size == 0:
            hist = self.battery_hist.copy()
        else:
            hist = self.battery_hist + other.battery_hist
        hits = other.coverage_hits if self.coverage_hits.size == 0 else self.coverage_hits + other.coverage_hits
        return TrialEstimate(
            thresholds_db=self.thresholds_db,
            mts=self.mts + other.mts,
            served=self.served + other.served,
            associated=self.associated + other.associated,
            rejected=self.rejected + other.rejected,
            sir_samples=self.sir_samples + other.sir_samples,
            coverage_hits=np.array(hits, dtype=np.int64),
            battery_hist=hist,
            slots=self.slots + other.slots,
            trial_outage=self.trial_outage + other.trial_outage,
        )


# ---------------------------------------------------------------------------
# association and service
# ---------------------------------------------------------------------------

def associate_proposed(required: np.ndarray, broadcast: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Cheapest BS whose broadcast level covers ``p`` plus the expected load of cheaper MTs."""
    coef = float(estimate_other_load(1.0, cfg))
    return _kernels.associate_available(np.ascontiguousarray(required, dtype=float),
                                        np.asarray(broadcast, dtype=np.int64), coef, cfg.delta + 1.0)


def associate_without(required: np.ndarray) -> np.ndarray:
    return _kernels.argmin_rows(np.ascontiguousarray(required, dtype=float))


def associate_realtime(required: np.ndarray, broadcast: np.ndarray, rng: np.random.Generator):
    """First-come first-served against the live battery.

    MTs arrive in a random order; each takes the cheapest BS that can still
    afford ``ceil(p)`` and that cost is committed at once. Returns the
    association and the committed units per BS.
    """
    arrival = rng.permutation(required.shape[0])
    return _kernels.first_come(np.ascontiguousarray(required, dtype=float),
                               np.asarray(broadcast, dtype=np.int64), arrival)


def select_and_serve(assoc: np.ndarray, required: np.ndarray, broadcast: np.ndarray):
    """Admit each BS's associated MTs cheapest first while the battery lasts.

    Returns ``(served mask, consumed units per BS)``.
    """
    return _kernels.serve_prefix(np.asarray(assoc, dtype=np.int64), np.ascontiguousarray(required, dtype=float),
                                 np.asarray(broadcast, dtype=np.int64))


def measure_sir(required: np.ndarray, assoc: np.ndarray, served: np.ndarray, tx_units: np.ndarray,
                cfg: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """SIR of every served MT with fresh Rayleigh fading on each link.

    ``tx_units`` is each BS's total transmit power this slot; a fraction
    ``1/N_RB`` of it lands on the MT's resource block. The received power
    target cancels against the path gain, so interference from BS ``j`` is
    ``tx_j / (N_RB p_kj) |h|^2`` relative to the signal ``|h|^2``.
    """
    sir = np.full(required.shape[0], np.nan)
    k = np.nonzero(served)[0]
    if k.size == 0:
        return sir
    scale = 1.0 / cfg.channel.nu
    sig = rng.exponential(scale, size=k.size)
    fade = rng.exponential(scale, size=(k.size, required.shape[1]))
    w = tx_units[None, :] / (cfg.deployment.n_rb * required[k])
    w[np.arange(k.size), assoc[k]] = 0.0
    interf = np.einsum("ij,ij->i", w, fade)
    with np.errstate(divide="ignore"):
        sir[k] = np.where(interf > 0, sig / interf, np.inf)
    return sir


# ---------------------------------------------------------------------------
# slot / trial / campaign
# ---------------------------------------------------------------------------

def draw_required(state: NetworkState, cfg: NetworkConfig, rng: np.random.Generator, mt_xy=None) -> np.ndarray:
    """Required units from each MT to every BS; MTs are drawn if not given."""
    if mt_xy is None:
        mt_xy = sample_ppp(cfg.lambda_mt_eff, state.window, rng)
    return required_units(mt_xy, state.bs_xy, state.window, cfg, rng)


def simulate_slot(state: NetworkState, cfg: NetworkConfig, scheme: SchemePolicy, rng: np.random.Generator,
                  with_sir: bool = False) -> SlotOutcome:
    """Advance ``state`` by one slot and report what happened."""
    start = state.battery.copy()
    broadcast = start - np.minimum(cfg.battery.broadcast_cost_units, start)
    if scheme is SchemePolicy.ON_GRID:
        harvested = np.zeros(state.n_bs, dtype=np.int64)
    else:
        harvested = cfg.harvest.burst_size * rng.poisson(cfg.harvest_rate_eff, size=state.n_bs).astype(np.int64)
    req = draw_required(state, cfg, rng)
    n_mt = req.shape[0]

    if scheme is SchemePolicy.ON_GRID:
        assoc = associate_without(req)
        best = req[np.arange(n_mt), assoc] if state.n_bs else np.full(n_mt, np.inf)
        served = best * cfg.eps <= cfg.deployment.ongrid_pmax_watts
        rejected = np.zeros(n_mt, dtype=bool)
        assoc = np.where(served, assoc, NONE)
        tx = np.bincount(assoc[served], weights=best[served], minlength=state.n_bs)
        consumed = np.zeros(state.n_bs, dtype=np.int64)
        end = start.copy()  # grid powered; batteries play no part
    else:
        if scheme is SchemePolicy.REAL_TIME_A:
            assoc, consumed = associate_realtime(req, broadcast, rng)
            served = assoc != NONE
        else:
            if scheme is SchemePolicy.PROPOSED_A:
                assoc = associate_proposed(req, broadcast, cfg)
            else:
                assoc = associate_without(req)
            served, consumed = select_and_serve(assoc, req, broadcast)
        rejected = (assoc != NONE) & ~served
        tx = consumed.astype(float)
        end = np.minimum(cfg.levels, broadcast - consumed + harvested)
        state.battery = end

    sir = measure_sir(req, assoc, served, tx, cfg, rng) if with_sir else None
    return SlotOutcome(start, broadcast, harvested, consumed, end, req, assoc, served, rejected, sir)


def run_trial(cfg: NetworkConfig, scheme, seed: int, slots: int | None = None, warmup: int | None = None,
              thresholds_db: Sequence[float] = (), on_slot: Callable[[int, SlotOutcome], None] | None = None,
              ) -> TrialEstimate:
    """One BS realisation simulated for ``slots`` slots, the first ``warmup`` discarded.

    Defaults: ``warmup = cfg.default_warmup()`` and ``slots = warmup + 200``.
    """
    scheme = SchemePolicy.parse(scheme) if isinstance(scheme, str) else scheme
    warmup = cfg.default_warmup() if warmup is None else int(warmup)
    slots = warmup + 200 if slots is None else int(slots)
    if not slots > warmup >= 0:
        raise ValueError("need slots > warmup >= 0")
    rng = np.random.default_rng(seed)
    state = NetworkState.initial(cfg, rng)
    t_lin = db_to_linear(np.asarray(thresholds_db, dtype=float))
    with_sir = t_lin.size > 0

    est = TrialEstimate(thresholds_db=tuple(float(t) for t in thresholds_db),
                        coverage_hits=np.zeros(t_lin.size, dtype=np.int64),
                        battery_hist=np.zeros(cfg.broadcast_levels + 1, dtype=np.int64))
    for t in range(slots):
        out = simulate_slot(state, cfg, scheme, rng, with_sir=with_sir and t >= warmup)
        if on_slot is not None:
            on_slot(t, out)
        if t < warmup:
            continue
        est.slots += 1
        est.mts += out.n_mt
        est.served += int(out.served.sum())
        est.associated += int((out.assoc != NONE).sum())
        est.rejected += int(out.rejected.sum())
        if scheme is not SchemePolicy.ON_GRID:
            est.battery_hist += np.bincount(out.broadcast, minlength=cfg.broadcast_levels + 1)
        if with_sir:
            s = out.sir[out.served]
            est.sir_samples += s.size
            est.coverage_hits += (s[:, None] >= t_lin[None, :]).sum(axis=0)
    est.trial_outage.append(est.outage_prob)
    return est


def _trial_job(args):
    return run_trial(*args)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("EHCELL_THREADS", "1")))
    except ValueError:
        return 1


def run_campaign(cfg: NetworkConfig, scheme, trials: int, base_seed: int = 0, slots: int | None = None,
                 warmup: int | None = None, thresholds_db: Sequence[float] = (), workers: int | None = None,
                 ) -> TrialEstimate:
    """Independent trials seeded ``base_seed + i``, pooled in index order."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    workers = default_workers() if workers is None else workers
    jobs = [(cfg, scheme, base_seed + i, slots, warmup, tuple(thresholds_db)) for i in range(trials)]
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=min(workers, trials)) as ex:
            results = list(ex.map(_trial_job, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_trial_job(j) for j in jobs]
    pooled = results[0]
    for r in results[1:]:
        pooled = pooled.merge(r)
    return pooled


# ---------------------------------------------------------------------------
# spatial probes
# ---------------------------------------------------------------------------

def probe_served(probe_req: np.ndarray, out: SlotOutcome, scheme: SchemePolicy, cfg: NetworkConfig) -> np.ndarray:
    """Would a virtual MT with requirements ``probe_req`` be served this slot?

    Probes do not load the network: each is judged alone against the MTs
    that actually associated, using the same association rule and the
    cheapest-first admission of the real MTs.
    """
    if probe_req.shape[1] == 0:
        return np.zeros(probe_req.shape[0], dtype=bool)
    if scheme is SchemePolicy.PROPOSED_A:
        assoc = associate_proposed(probe_req, out.broadcast, cfg)
    elif scheme is SchemePolicy.WITHOUT_A:
        assoc = associate_without(probe_req)
    else:
        raise ValueError("probes support schemes A and woA")
    ok = assoc != NONE
    j = np.where(ok, assoc, 0)
    p = probe_req[np.arange(len(j)), j]
    # units already claimed by cheaper real MTs at the same BS
    real = np.nonzero(out.assoc != NONE)[0]
    ahead = np.zeros(len(j))
    if real.size:
        rb = out.assoc[real]
        rp = out.required[real, rb]
        rc = np.ceil(rp)
        order = np.lexsort((rp, rb))
        rb, rp, rc = rb[order], rp[order], rc[order]
        cs = np.cumsum(rc)
        for i in np.nonzero(ok)[0]:
            lo, hi = np.searchsorted(rb, j[i], "left"), np.searchsorted(rb, j[i], "right")
            n_before = np.searchsorted(rp[lo:hi], p[i], "left")
            ahead[i] = (cs[lo + n_before - 1] - (cs[lo - 1] if lo else 0)) if n_before else 0.0
    return ok & (ahead + np.ceil(p) <= out.broadcast[j])


def outage_map(cfg: NetworkConfig, scheme, seed: int, resolution: int, slots: int | None = None,
               warmup: int | None = None):
    """Per-location outage frequency on a ``resolution x resolution`` grid.

    Returns ``(xs, ys, outage)`` with ``outage`` shaped ``(resolution, resolution)``
    and indexed ``[iy, ix]``. The BS layout depends only on ``seed``.
    """
    scheme = SchemePolicy.parse(scheme) if isinstance(scheme, str) else scheme
    warmup = cfg.default_warmup() if warmup is None else int(warmup)
    slots = warmup + 200 if slots is None else int(slots)
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    rng = np.random.default_rng(seed)
    state = NetworkState.initial(cfg, rng)
    r = state.window.radius_m
    xs = -r + (np.arange(resolution) + 0.5) * (2 * r / resolution)
    gx, gy = np.meshgrid(xs, xs)
    probes = np.column_stack([gx.ravel(), gy.ravel()])
    dist = torus_distance(probes, state.bs_xy, state.window)
    # probe shadowing uses its own stream so the network evolves identically with or without probes
    probe_rng = np.random.default_rng([seed, 1])
    misses = np.zeros(len(probes))
    for t in range(slots):
        out = simulate_slot(state, cfg, scheme, rng)
        chi = draw_shadowing(dist.shape, cfg, probe_rng)
        if t < warmup:
            continue
        req = required_power(dist, chi, cfg) / cfg.eps
        misses += ~probe_served(req, out, scheme, cfg)
    return xs, xs.copy(), (misses / (slots - warmup)).reshape(resolution, resolution)


def outage_gain(p_without: np.ndarray, p_proposed: np.ndarray) -> np.ndarray:
    """Relative outage reduction ``(P_wo - P_A) / P_wo``; zero where ``P_wo = 0``."""
    p_without = np.asarray(p_without, dtype=float)
    diff = p_without - np.asarray(p_proposed, dtype=float)
    safe = np.where(p_without > 0, p_without, 1.0)
    return np.where(p_without > 0, diff / safe, 0.0)
