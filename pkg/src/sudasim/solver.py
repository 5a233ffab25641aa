"""Alternating-optimization solver for the two-hop OFDMA efficiency problem.

The outer loop is a fractional-programming update of the efficiency price
eta; the inner loop sweeps block updates over downlink powers, uplink
powers, subcarrier assignment, and the time split. Two variants are
provided:

- "optimal": block updates derived for the high-SNR rate model (the
  harmonic-SINR approximation), under which the per-tuple power pair has
  a closed form and the transformed problem is concave.
- "suboptimal": block updates for the exact relayed SINR at arbitrary
  SNR, found by coordinate iteration of the per-link closed forms.

Every block update is guarded: a candidate that does not improve the
inner objective is discarded, so the inner objective is nondecreasing
across sweeps and the eta iterates are nondecreasing across outer
iterations.

Power-budget multipliers are found by bisection on their complementary
slackness residuals; rate-floor weights are found by an outer bisection
per delay-sensitive UE, keeping the floor-feasible side.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import numpy as np

from . import model
from .model import LN2, AllocationPolicy, SolveReport, SystemConfig

_TINY = 1e-30
_VARIANTS = ("optimal", "suboptimal")


# =========================================================================
# closed-form per-link power updates
# =========================================================================

def _core_optimal(g_own, g_other, p_other, w, price):
    # water-filling style update for the harmonic-SINR rate model; the
    # root is expanded as omega - b = q / (omega + b) so a dominant cross
    # term b cannot cancel the increment away
    g_own = np.asarray(g_own, dtype=float)
    b = np.asarray(g_other, dtype=float) * np.asarray(p_other, dtype=float)
    price = np.maximum(np.asarray(price, dtype=float), _TINY)
    g_safe = np.maximum(g_own, _TINY)
    q = 4.0 * (1.0 + w) * g_safe * (1.0 + b) / (price * LN2)
    omega = np.sqrt(b * b + q)
    p = b * (q / (omega + b) - 2.0) / (2.0 * g_safe * (1.0 + b))
    return np.where(g_own > 0.0, np.maximum(p, 0.0), 0.0)


def _core_suboptimal(g_own, g_other, p_other, w, price):
    # coordinate update for the exact relayed SINR; 0.5*b*(root - 1) is
    # evaluated as 2g(1+w) / (ln2 * price * (1 + root)), where the cross
    # term cancels algebraically, to stay exact for huge p_other
    g_own = np.asarray(g_own, dtype=float)
    b = np.asarray(g_other, dtype=float) * np.asarray(p_other, dtype=float)
    price = np.maximum(np.asarray(price, dtype=float), _TINY)
    g_safe = np.maximum(g_own, _TINY)
    b_safe = np.maximum(b, _TINY)
    root = np.sqrt(1.0 + 4.0 * g_safe * (1.0 + w) / (b_safe * LN2 * price))
    p = (2.0 * g_safe * (1.0 + w) / (LN2 * price * (1.0 + root)) - 1.0) / g_safe
    return np.where((g_own > 0.0) & (b > 0.0), np.maximum(p, 0.0), 0.0)


def dl_power_bs(g_bs, g_sue, p_sue, w_dl, price):
    """Feeder-hop power of the high-SNR variant; price = lam + eta*eps_bs."""
    return _core_optimal(g_bs, g_sue, p_sue, w_dl, price)


def dl_power_sudas(g_bs, g_sue, p_bs, w_dl, price):
    """Forward-hop power of the high-SNR variant; price = delta + eta*eps_s."""
    return _core_optimal(g_sue, g_bs, p_bs, w_dl, price)


def ul_power_ue(g_ues, g_sb, p_sb, w_ul, price):
    """UE transmit power of the high-SNR variant; price = psi_k + eta*eps_k."""
    return _core_optimal(g_ues, g_sb, p_sb, w_ul, price)


def ul_power_sudas(g_ues, g_sb, p_ues, w_ul, price):
    """Uplink forward power of the high-SNR variant; price = phi + eta*eps_s."""
    return _core_optimal(g_sb, g_ues, p_ues, w_ul, price)


def suboptimal_dl_power_bs(g_bs, g_sue, p_sue, w_dl, price):
    """Feeder-hop power of the arbitrary-SNR variant."""
    return _core_suboptimal(g_bs, g_sue, p_sue, w_dl, price)


def suboptimal_dl_power_sudas(g_bs, g_sue, p_bs, w_dl, price):
    """Forward-hop power of the arbitrary-SNR variant."""
    return _core_suboptimal(g_sue, g_bs, p_bs, w_dl, price)


def suboptimal_ul_power_ue(g_ues, g_sb, p_sb, w_ul, price):
    """UE transmit power of the arbitrary-SNR variant."""
    return _core_suboptimal(g_ues, g_sb, p_sb, w_ul, price)


def suboptimal_ul_power_sudas(g_ues, g_sb, p_ues, w_ul, price):
    """Uplink forward power of the arbitrary-SNR variant."""
    return _core_suboptimal(g_sb, g_ues, p_ues, w_ul, price)


def _pair_joint_approx(g1, g2, c1, c2, w):
    """Joint per-tuple power pair maximizing the harmonic-SINR score.

    Solves max (1+w) log2(1 + S) - c1 p1 - c2 p2 for the harmonic SINR
    S = ab/(a+b) with a = g1 p1, b = g2 p2. The first-order conditions
    pin the ratio b/a; both powers then share one water-filling bracket.
    """
    c1 = np.maximum(np.asarray(c1, dtype=float), _TINY)
    c2 = np.maximum(np.asarray(c2, dtype=float), _TINY)
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    g1s = np.maximum(g1, _TINY)
    g2s = np.maximum(g2, _TINY)
    r = np.sqrt(g2s * c1 / (g1s * c2))
    t_own = r / (1.0 + r)
    t_oth = 1.0 / (1.0 + r)
    bracket = (1.0 + w) * g1s * t_own * t_own / (c1 * LN2) - 1.0
    live = (bracket > 0.0) & (g1 > 0.0) & (g2 > 0.0)
    bracket = np.where(live, bracket, 0.0)
    p1 = np.where(live, bracket / np.maximum(t_own, _TINY) / g1s, 0.0)
    p2 = np.where(live, bracket / np.maximum(t_oth, _TINY) / g2s, 0.0)
    return p1, p2


def _pair_exact(g1, g2, c1, c2, w, rounds):
    """Per-tuple pair for the exact-SINR score by coordinate iteration.

    Seeded from the harmonic-SINR joint solution: wherever that relaxed
    problem is unprofitable the exact one is too (its rate is never
    larger), so zero seeds are final. A last check zeroes pairs whose
    score is negative at the stationary point the iteration reached.
    """
    p1, p2 = _pair_joint_approx(g1, g2, c1, c2, w)
    for _ in range(rounds):
        q1 = _core_suboptimal(g1, g2, p2, w, c1)
        q2 = _core_suboptimal(g2, g1, q1, w, c2)
        moved = max(np.max(np.abs(q1 - p1)), np.max(np.abs(q2 - p2)))
        p1, p2 = q1, q2
        if moved <= 1e-12 * (1.0 + max(np.max(p1), np.max(p2))):
            break
    score = (1.0 + w) * model.rate_exact_dl(g1, g2, p1, p2) - c1 * p1 - c2 * p2
    keep = score > 0.0
    return np.where(keep, p1, 0.0), np.where(keep, p2, 0.0)


def _pair_powers(g1, g2, c1, c2, w, variant, rounds):
    if variant == "optimal":
        return _pair_joint_approx(g1, g2, c1, c2, w)
    return _pair_exact(g1, g2, c1, c2, w, rounds)


def _rates(g1, g2, p1, p2, variant):
    if variant == "optimal":
        return model.rate_approx_dl(g1, g2, p1, p2)
    return model.rate_exact_dl(g1, g2, p1, p2)


# =========================================================================
# subcarrier assignment and time split
# =========================================================================

def assign_subcarriers_dl(sinr, w_dl, alpha, metric_ln2=False):
    """Winner-take-all downlink subcarrier shares from per-tuple SINRs.

    sinr: (n_f, K, n_s) array for the candidate powers; w_dl: (K,) floor
    weights. Returns the (n_f, K) share matrix with alpha at each winner.
    Ties go to the lowest UE index. metric_ln2 divides the subtractive
    term by ln 2, matching the selection implied by the dual scores.
    """
    sinr = np.asarray(sinr, dtype=float)
    sub = sinr / (1.0 + sinr)
    if metric_ln2:
        sub = sub / LN2
    metric = (1.0 + np.asarray(w_dl, dtype=float))[None, :] \
        * np.sum(np.log2(1.0 + sinr) - sub, axis=2)
    win = np.argmax(metric, axis=1)
    s = np.zeros(metric.shape)
    s[np.arange(s.shape[0]), win] = alpha
    return s


def assign_subcarriers_ul(sinr, w_ul, beta, metric_ln2=False):
    """Uplink twin of :func:`assign_subcarriers_dl`."""
    return assign_subcarriers_dl(sinr, w_ul, beta, metric_ln2)


def update_time_split(gain_dl, gain_ul, alpha_bounds, beta_bounds):
    """Maximize gain_dl*alpha + gain_ul*beta over the time-share polytope.

    The polytope is [a_lo, a_hi] x [b_lo, b_hi] cut by alpha + beta <= 1.
    The maximum sits at a vertex; exact ties are resolved by averaging
    the tied vertices (the average stays optimal by linearity).
    Raises ValueError when the polytope is empty.
    """
    a_lo, a_hi = alpha_bounds
    b_lo, b_hi = beta_bounds
    tol = 1e-12
    if a_lo > a_hi + tol or b_lo > b_hi + tol or a_lo + b_lo > 1.0 + tol:
        raise ValueError("time-sharing constraints are infeasible")
    a_hi = min(a_hi, 1.0 - b_lo)
    b_hi = min(b_hi, 1.0 - a_lo)
    verts = [(a_lo, b_lo), (a_lo, b_hi), (a_hi, b_lo)]
    if a_hi + b_hi <= 1.0 + tol:
        verts.append((a_hi, b_hi))
    else:
        verts.append((a_hi, 1.0 - a_hi))
        verts.append((1.0 - b_hi, b_hi))
    vals = [gain_dl * a + gain_ul * b for a, b in verts]
    best = max(vals)
    scale = max(abs(best), 1.0)
    tied = [v for v, x in zip(verts, vals) if x >= best - 1e-12 * scale]
    alpha = sum(v[0] for v in tied) / len(tied)
    beta = sum(v[1] for v in tied) / len(tied)
    return alpha, beta


# =========================================================================
# options and multiplier state
# =========================================================================

@dataclass
class Multipliers:
    """Dual variables: budgets (lam, delta, psi, phi) and floors (w_dl, w_ul)."""

    lam: float
    delta: float
    psi: np.ndarray
    phi: float
    w_dl: np.ndarray
    w_ul: np.ndarray

    @staticmethod
    def zeros(n_ues):
        return Multipliers(0.0, 0.0, np.zeros(n_ues), 0.0,
                           np.zeros(n_ues), np.zeros(n_ues))

    def clone(self):
        return Multipliers(self.lam, self.delta, self.psi.copy(), self.phi,
                           self.w_dl.copy(), self.w_ul.copy())


@dataclass
class SolverOptions:
    eta_tolerance: float = 1e-6        # Dinkelbach gap, internal rate units
    max_outer: int = 60
    max_inner: int = 50
    inner_tolerance: float = 1e-9      # final sweep-improvement threshold
    budget_tolerance: float = 1e-8     # relative slack allowed on budgets
    bisect_iters: int = 40
    bracket_doublings: int = 40
    pair_rounds: int = 3               # cap on coordinate rounds, exact-SINR pairs
    multiplier_rounds: int = 2
    w_doublings: int = 40
    w_bisect_iters: int = 4
    w_cap: float = 1e9
    w_rounds: int = 2
    kappa_base: float = 1e-3           # inner threshold at the first eta step
    kappa_decay: float = 0.3           # per-eta-step shrink factor
    metric_ln2: bool = False
    max_aggregate: int | None = None   # cap on total sweeps, None = off


# =========================================================================
# budget dual search shared by all block solvers
# =========================================================================

def _bisect_smallest(residual, warm, tol, opts):
    """Smallest multiplier with residual <= 0, bracketing from warm."""
    if residual(0.0) <= 0.0:
        return 0.0
    lo, hi = 0.0, None
    if warm > 0.0:
        rw = residual(warm)
        if -tol <= rw <= 0.0:
            return warm
        if rw > 0.0:
            lo = warm
        else:
            hi = warm
            probe = warm / 8.0
            if residual(probe) > 0.0:
                lo = probe
            else:
                hi = probe
    if hi is None:
        hi = 2.0 * max(lo, 1.0)
        for _ in range(opts.bracket_doublings):
            if residual(hi) <= 0.0:
                break
            lo = hi
            hi *= 4.0
    for _ in range(opts.bisect_iters):
        mid = 0.5 * (lo + hi)
        r = residual(mid)
        if r > 0.0:
            lo = mid
        else:
            hi = mid
            if r >= -tol:
                break
    return hi


def _dual_slack_ok(m, use, budget, tol):
    held = np.all(use <= budget + tol)
    tight = np.all((np.asarray(m) <= _TINY) | (use >= budget - tol))
    return bool(held and tight)


# =========================================================================
# per-link block solve: joint powers + assignment under budget duals
# =========================================================================

class _LinkBlock:
    """One link's (assignment, powers) block at fixed share and floor weights.

    For the downlink, hop 1 is the shared feeder (g1 is (n_f, n_s)) and
    budget 1 is a total; for the uplink, hop 1 is per UE (g1 is
    (n_f, K, n_s)) and budget 1 applies per UE. Hop 2 is the forward hop
    with a total budget in both directions.
    """

    def __init__(self, g1, g2, per_ue, budget1, budget2, eps1, eps2, w,
                 variant, opts):
        self.per_ue = per_ue
        if per_ue:
            self.g1 = g1
            self.g2 = np.broadcast_to(g2[:, None, :], g1.shape)
            self.n_f, self.k, self.n_s = g1.shape
        else:
            self.g1 = np.broadcast_to(g1[:, None, :], g2.shape)
            self.g2 = g2
            self.n_f, self.k, self.n_s = g2.shape
        self.budget1 = budget1
        self.budget2 = budget2
        self.eps1 = eps1
        self.eps2 = eps2
        self.w = np.asarray(w, dtype=float)
        self.variant = variant
        self.opts = opts

    def _pairs(self, m1, m2, eta, cap_share):
        c1 = np.asarray(m1, dtype=float) + eta * self.eps1
        if self.per_ue:
            c1 = c1[:, None]
            c1 = np.broadcast_to(c1, (self.k, self.n_s))[None, :, :]
        c2 = m2 + eta * self.eps2
        p1, p2 = _pair_powers(self.g1, self.g2, c1, c2, self.w[None, :, None],
                              self.variant, self.opts.pair_rounds)
        # a single tuple's energy share can never exceed the whole budget,
        # so this cap excludes no feasible point; it keeps the demand finite
        # when a zero price meets a zero multiplier
        p1 = np.minimum(p1, self.budget1 / cap_share)
        p2 = np.minimum(p2, self.budget2 / cap_share)
        rate = _rates(self.g1, self.g2, p1, p2, self.variant)
        score = np.sum((1.0 + self.w[None, :, None]) * rate
                       - c1 * p1 - c2 * p2, axis=2)
        win = np.argmax(score, axis=1)
        rows = np.arange(self.n_f)
        return p1[rows, win], p2[rows, win], win

    def _usage(self, m1, m2, eta, share):
        p1, p2, win = self._pairs(m1, m2, eta, share)
        if self.per_ue:
            use1 = np.zeros(self.k)
            np.add.at(use1, win, share * p1.sum(axis=1))
        else:
            use1 = share * p1.sum()
        return use1, share * p2.sum()

    def solve(self, m1_warm, m2_warm, eta, share):
        """Returns winner, per-subcarrier pair powers, and tight multipliers."""
        opts = self.opts
        if share <= 1e-12:
            # inactive link: budgets cannot bind, price at eta only
            m1 = np.zeros(self.k) if self.per_ue else 0.0
            p1, p2, win = self._pairs(m1, 0.0, eta, 1.0)
            return win, p1, p2, m1, 0.0
        tol1 = opts.budget_tolerance * self.budget1
        tol2 = opts.budget_tolerance * self.budget2
        m1 = np.array(m1_warm, dtype=float) if self.per_ue else float(m1_warm)
        m2 = float(m2_warm)
        for _ in range(opts.multiplier_rounds):
            use1, use2 = self._usage(m1, m2, eta, share)
            if _dual_slack_ok(m1, use1, self.budget1, tol1) \
                    and _dual_slack_ok(m2, use2, self.budget2, tol2):
                break
            if self.per_ue:
                for kk in range(self.k):
                    def res(x, kk=kk):
                        trial = m1.copy()
                        trial[kk] = x
                        return self._usage(trial, m2, eta, share)[0][kk] - self.budget1
                    m1[kk] = _bisect_smallest(res, m1[kk], tol1, opts)
            else:
                m1 = _bisect_smallest(
                    lambda x: self._usage(x, m2, eta, share)[0] - self.budget1,
                    m1, tol1, opts)
            m2 = _bisect_smallest(
                lambda x: self._usage(m1, x, eta, share)[1] - self.budget2,
                m2, tol2, opts)
        p1, p2, win = self._pairs(m1, m2, eta, share)
        # the alternating dual searches can leave a budget slightly oversubscribed
        # when the winner assignment shifts between rounds; scale the offending
        # powers down so every candidate the sweeps see is budget-feasible
        if self.per_ue:
            use1 = np.zeros(self.k)
            np.add.at(use1, win, share * p1.sum(axis=1))
            over = use1 > self.budget1
            if np.any(over):
                scale = np.where(over, self.budget1 / np.maximum(use1, _TINY), 1.0)
                p1 = p1 * scale[win][:, None]
        else:
            use1 = share * p1.sum()
            if use1 > self.budget1:
                p1 = p1 * (self.budget1 / use1)
        use2 = share * p2.sum()
        if use2 > self.budget2:
            p2 = p2 * (self.budget2 / use2)
        return win, p1, p2, m1, m2


# =========================================================================
# inner alternating optimization at fixed eta and floor weights
# =========================================================================

@dataclass
class _InnerState:
    win_dl: np.ndarray
    p_bs: np.ndarray
    p_sue: np.ndarray
    win_ul: np.ndarray
    p_ues: np.ndarray
    p_sb: np.ndarray
    alpha: float
    beta: float
    mult: Multipliers

    @staticmethod
    def cold(eff, cfg):
        n_f, n_s = eff.g_bs.shape
        return _InnerState(np.zeros(n_f, dtype=int), np.zeros((n_f, n_s)),
                           np.zeros((n_f, n_s)), np.zeros(n_f, dtype=int),
                           np.zeros((n_f, n_s)), np.zeros((n_f, n_s)),
                           0.5, 0.5, Multipliers.zeros(cfg.n_ues))

    def clone(self):
        return _InnerState(self.win_dl.copy(), self.p_bs.copy(), self.p_sue.copy(),
                           self.win_ul.copy(), self.p_ues.copy(), self.p_sb.copy(),
                           self.alpha, self.beta, self.mult.clone())


def _per_ue_coeffs(state, eff, cfg, variant):
    """Intensive per-UE rate sums (bits per symbol at unit share) per link."""
    n_f = eff.g_bs.shape[0]
    rows = np.arange(n_f)
    g2 = eff.g_sue[rows, state.win_dl]
    rate_dl = np.sum(_rates(eff.g_bs, g2, state.p_bs, state.p_sue, variant), axis=1)
    g1 = eff.g_ues[rows, state.win_ul]
    rate_ul = np.sum(_rates(g1, eff.g_sb, state.p_ues, state.p_sb, variant), axis=1)
    c_dl = np.zeros(cfg.n_ues)
    c_ul = np.zeros(cfg.n_ues)
    np.add.at(c_dl, state.win_dl, rate_dl)
    np.add.at(c_ul, state.win_ul, rate_ul)
    return c_dl, c_ul


def _objective(state, eff, cfg, eta, variant):
    """Floor-weighted inner objective with the (U, U_TP) pair behind it."""
    c_dl, c_ul = _per_ue_coeffs(state, eff, cfg, variant)
    u = state.alpha * c_dl.sum() + state.beta * c_ul.sum()
    u_w = state.alpha * ((1.0 + state.mult.w_dl) * c_dl).sum() \
        + state.beta * ((1.0 + state.mult.w_ul) * c_ul).sum()
    u_tp = (cfg.static_power_w()
            + cfg.amp_slope_bs * state.alpha * state.p_bs.sum()
            + cfg.amp_slope_sudas * (state.alpha * state.p_sue.sum()
                                     + state.beta * state.p_sb.sum())
            + cfg.amp_slope_ue * state.beta * state.p_ues.sum())
    return u_w - eta * u_tp, u, u_tp, c_dl, c_ul


def _floor_share(c, floors, cap):
    """Smallest share meeting every active floor; inf when out of reach."""
    lo = 0.0
    for ck, fk in zip(c, floors):
        if fk <= 0.0:
            continue
        if ck <= 0.0:
            return np.inf
        lo = max(lo, fk / ck)
    return lo if lo <= cap else np.inf


def _budget_cap(share, usage_budget_pairs):
    cap = 1.0
    for usage, budget in usage_budget_pairs:
        if usage > 0.0:
            cap = min(cap, budget / usage)
    # the incumbent share is budget-feasible; guard against rounding
    return max(cap, min(share, 1.0))


def _solve_split(state, cfg, eta, c_dl, c_ul, floors_dl, floors_ul):
    w_dl, w_ul = state.mult.w_dl, state.mult.w_ul
    gain_dl = ((1.0 + w_dl) * c_dl).sum() - eta * (
        cfg.amp_slope_bs * state.p_bs.sum()
        + cfg.amp_slope_sudas * state.p_sue.sum())
    gain_ul = ((1.0 + w_ul) * c_ul).sum() - eta * (
        cfg.amp_slope_ue * state.p_ues.sum()
        + cfg.amp_slope_sudas * state.p_sb.sum())
    a_cap = _budget_cap(state.alpha,
                        [(state.p_bs.sum(), cfg.p_bs_max_w),
                         (state.p_sue.sum(), cfg.p_sudas_dl_total_w)])
    b_pairs = [(state.p_sb.sum(), cfg.p_sudas_ul_total_w)]
    for kk in range(cfg.n_ues):
        b_pairs.append((state.p_ues[state.win_ul == kk].sum(), cfg.p_ue_max_w))
    b_cap = _budget_cap(state.beta, b_pairs)
    a_lo = _floor_share(c_dl, floors_dl, a_cap)
    b_lo = _floor_share(c_ul, floors_ul, b_cap)
    if not np.isfinite(a_lo) or not np.isfinite(b_lo):
        raise ValueError("time-sharing constraints are infeasible")
    return update_time_split(gain_dl, gain_ul, (a_lo, a_cap), (b_lo, b_cap))


def _floors_internal(cfg):
    bw = cfg.subcarrier_bandwidth_hz
    return (np.asarray(cfg.r_min_dl_bps) / bw, np.asarray(cfg.r_min_ul_bps) / bw)


def inner_solve(eff, cfg: SystemConfig, eta, variant="optimal",
                options: SolverOptions | None = None, warm=None, kappa=None):
    """Guarded alternating block sweeps at fixed eta and floor weights.

    Returns (state, info). info["objective_curve"] holds the inner
    objective after each sweep and is nondecreasing by construction;
    info["ee_points"] holds the matching (U, U_TP) pairs.
    """
    if variant not in _VARIANTS:
        raise ValueError("variant must be 'optimal' or 'suboptimal'")
    opts = options or SolverOptions()
    kappa = opts.inner_tolerance if kappa is None else kappa
    state = warm.clone() if warm is not None else _InnerState.cold(eff, cfg)
    floors_dl, floors_ul = _floors_internal(cfg)

    dl_block = _LinkBlock(eff.g_bs, eff.g_sue, False, cfg.p_bs_max_w,
                          cfg.p_sudas_dl_total_w, cfg.amp_slope_bs,
                          cfg.amp_slope_sudas, state.mult.w_dl, variant, opts)
    ul_block = _LinkBlock(eff.g_ues, eff.g_sb, True, cfg.p_ue_max_w,
                          cfg.p_sudas_ul_total_w, cfg.amp_slope_ue,
                          cfg.amp_slope_sudas, state.mult.w_ul, variant, opts)

    def dl_step(st):
        win, p1, p2, lam, delta = dl_block.solve(st.mult.lam, st.mult.delta,
                                                 eta, st.alpha)
        st.win_dl, st.p_bs, st.p_sue = win, p1, p2
        st.mult.lam, st.mult.delta = float(lam), float(delta)

    def ul_step(st):
        win, p1, p2, psi, phi = ul_block.solve(st.mult.psi, st.mult.phi,
                                               eta, st.beta)
        st.win_ul, st.p_ues, st.p_sb = win, p1, p2
        st.mult.psi, st.mult.phi = np.asarray(psi, dtype=float), float(phi)

    obj = _objective(state, eff, cfg, eta, variant)[0]
    curve, ee_points, floor_ok = [], [], []
    a_hist, b_hist = [], []
    for _ in range(opts.max_inner):
        prev = obj
        jumped = False
        if len(a_hist) >= 4:
            # the split and the power blocks contract toward a joint fixed
            # point; once the share steps turn geometric with a stable ratio,
            # trial the extrapolated limit in one guarded sweep
            d1 = a_hist[-3] - a_hist[-4]
            d2 = a_hist[-2] - a_hist[-3]
            d3 = a_hist[-1] - a_hist[-2]
            if (d1 * d2 > 0.0 and d2 * d3 > 0.0
                    and 1e-10 < abs(d3) < 0.9 * abs(d2)
                    and abs(d3 / d2 - d2 / d1) <= 0.15):
                r = d3 / d2
                a_star = float(np.clip(a_hist[-1] + d3 * r / (1.0 - r),
                                       0.0, 1.0))
                db = b_hist[-1] - b_hist[-2]
                b_star = float(np.clip(b_hist[-1] + db * r / (1.0 - r),
                                       0.0, 1.0 - a_star))
                cand = state.clone()
                cand.alpha, cand.beta = a_star, b_star
                dl_step(cand)
                ul_step(cand)
                cand_obj = _objective(cand, eff, cfg, eta, variant)[0]
                if cand_obj >= obj and (
                        _floors_met(cand, eff, cfg, variant)
                        or not _floors_met(state, eff, cfg, variant)):
                    state, obj = cand, cand_obj
                a_hist.clear()
                b_hist.clear()
                jumped = True
        if not jumped:
            cand = state.clone()
            dl_step(cand)
            cand_obj = _objective(cand, eff, cfg, eta, variant)[0]
            if cand_obj >= obj:
                state, obj = cand, cand_obj

            cand = state.clone()
            ul_step(cand)
            cand_obj = _objective(cand, eff, cfg, eta, variant)[0]
            if cand_obj >= obj:
                state, obj = cand, cand_obj

            obj, u, u_tp, c_dl, c_ul = _objective(state, eff, cfg, eta, variant)
            cand = state.clone()
            try:
                cand.alpha, cand.beta = _solve_split(cand, cfg, eta, c_dl, c_ul,
                                                     floors_dl, floors_ul)
                cand_obj = _objective(cand, eff, cfg, eta, variant)[0]
                if cand_obj >= obj:
                    state, obj = cand, cand_obj
            except ValueError:
                pass

        obj, u, u_tp, _, _ = _objective(state, eff, cfg, eta, variant)
        curve.append(obj)
        ee_points.append((u, u_tp))
        floor_ok.append(_floors_met(state, eff, cfg, variant))
        a_hist.append(state.alpha)
        b_hist.append(state.beta)
        if not jumped and obj - prev <= kappa * max(1.0, abs(obj)):
            break
    return state, {"objective_curve": curve, "ee_points": ee_points,
                   "floor_ok": floor_ok, "sweeps": len(curve)}


# =========================================================================
# rate-floor weight search
# =========================================================================

def _floor_rates(state, eff, cfg, variant):
    c_dl, c_ul = _per_ue_coeffs(state, eff, cfg, variant)
    return state.alpha * c_dl, state.beta * c_ul


def _floor_gaps(state, eff, cfg, variant):
    """Relative shortfall per (link, ue); <= 0 means the floor is met."""
    floors_dl, floors_ul = _floors_internal(cfg)
    r_dl, r_ul = _floor_rates(state, eff, cfg, variant)
    gap_dl = np.where(floors_dl > 0.0,
                      1.0 - r_dl / np.maximum(floors_dl, _TINY), 0.0)
    gap_ul = np.where(floors_ul > 0.0,
                      1.0 - r_ul / np.maximum(floors_ul, _TINY), 0.0)
    return gap_dl, gap_ul


def _floors_met(state, eff, cfg, variant, slack=1e-9):
    gap_dl, gap_ul = _floor_gaps(state, eff, cfg, variant)
    return bool(np.all(gap_dl <= slack) and np.all(gap_ul <= slack))


def solve_fixed_eta(eff, cfg, eta, variant, opts, warm, kappa):
    """Inner solve plus the floor-weight search when rate floors bind.

    Returns (state, info); the state maximizes the true score U - eta*U_TP
    among the floor-feasible candidates seen (including the warm start),
    which keeps the outer eta iterates nondecreasing. info["floor_ok"]
    flags each recorded sweep.
    """
    sweeps = 0
    ee_points = []
    feas = []
    candidates = []
    if warm is not None and _floors_met(warm, eff, cfg, variant):
        candidates.append(warm.clone())

    def runner(o):
        def run(start):
            nonlocal sweeps
            out, info = inner_solve(eff, cfg, eta, variant, o, start, kappa)
            ok = _floors_met(out, eff, cfg, variant)
            sweeps += info["sweeps"]
            ee_points.extend(info["ee_points"])
            feas.extend(info["floor_ok"])
            if ok:
                candidates.append(out)
            return out, ok
        return run

    run = runner(opts)
    state, ok = run(warm)
    if not ok:
        floors_dl, floors_ul = _floors_internal(cfg)
        escalate_floor_weights(floors_dl, floors_ul, opts, state, run,
                               lambda st: _floor_gaps(st, eff, cfg, variant),
                               probe=runner(replace(opts, max_inner=1)))
    elif np.any(state.mult.w_dl > 0.0) or np.any(state.mult.w_ul > 0.0):
        # floors met with leftover pressure: probe lower weights so stale
        # values decay across outer iterations instead of pinning rates
        base = state.clone()
        floors_dl, floors_ul = _floors_internal(cfg)
        r_dl, r_ul = _floor_rates(base, eff, cfg, variant)
        over_dl = (base.mult.w_dl > 0.0) & (r_dl > 1.02 * floors_dl)
        over_ul = (base.mult.w_ul > 0.0) & (r_ul > 1.02 * floors_ul)
        if np.any(over_dl) or np.any(over_ul):
            base.mult.w_dl = np.where(over_dl, 0.5 * base.mult.w_dl,
                                      base.mult.w_dl)
            base.mult.w_ul = np.where(over_ul, 0.5 * base.mult.w_ul,
                                      base.mult.w_ul)
            run(base)

    def true_score(st):
        _, u, u_tp, _, _ = _objective(st, eff, cfg, eta, variant)
        return u - eta * u_tp

    best = max(candidates, key=true_score) if candidates else state
    return best, {"sweeps": sweeps, "ee_points": ee_points, "floor_ok": feas}


def escalate_floor_weights(floors_dl, floors_ul, opts, state, run, gaps_of,
                           probe=None):
    """Raise per-UE floor weights until every rate floor is met.

    Generic over the solver state: ``run(start)`` re-solves warm from
    ``start`` and returns ``(state, floors_ok)``; ``probe`` is a cheaper
    single-sweep runner used while hunting for the weight threshold and
    defaults to ``run``; ``gaps_of(state)`` returns the (downlink, uplink)
    relative shortfall vectors; the state carries its weights in
    ``state.mult.w_dl`` / ``state.mult.w_ul``. For each unmet floor the
    weight is grown geometrically until the floor holds, then narrowed
    keeping the feasible side, and the accepted weight is confirmed with a
    full ``run``. Weight changes interact, so the scan repeats for a few
    rounds.
    """
    if probe is None:
        probe = run
    n_ues = len(floors_dl)
    for _ in range(opts.w_rounds):
        gaps = gaps_of(state)
        progress = False
        for side, floors in ((0, floors_dl), (1, floors_ul)):
            for kk in range(n_ues):
                if floors[kk] <= 0.0 or gaps[side][kk] <= 1e-9:
                    continue
                progress = True
                base = state.clone()
                w_vec = base.mult.w_dl if side == 0 else base.mult.w_ul
                lo = w_vec[kk]
                hi = max(2.0 * lo, 0.0625)
                hit = False
                for _ in range(opts.w_doublings):
                    w_vec[kk] = hi
                    trial, _ok = probe(base)
                    if gaps_of(trial)[side][kk] <= 1e-9:
                        hit = True
                        break
                    lo, hi = hi, hi * 4.0
                    if hi > opts.w_cap:
                        break
                if not hit:
                    continue
                for _ in range(opts.w_bisect_iters):
                    mid = 0.5 * (lo + hi)
                    w_vec[kk] = mid
                    trial, _ok = probe(base)
                    if gaps_of(trial)[side][kk] <= 1e-9:
                        hi = mid
                    else:
                        lo = mid
                w_vec[kk] = hi
                state, _ok = run(base)
                # the cheap probes can misjudge the threshold; grow from the
                # confirmed run while the floor still leaks
                while gaps_of(state)[side][kk] > 1e-9 and hi < opts.w_cap:
                    hi *= 4.0
                    w_vec[kk] = hi
                    state, _ok = run(base)
        gaps = gaps_of(state)
        if (np.all(gaps[0] <= 1e-9) and np.all(gaps[1] <= 1e-9)) or not progress:
            break
    return state


# =========================================================================
# feasibility pre-check and the outer fractional-programming loop
# =========================================================================

def check_feasibility(eff, cfg: SystemConfig):
    """Cheap necessary conditions for the rate floors; raises when violated.

    Each delay-sensitive UE is granted the whole band and both hop budgets
    on every tuple at once; the resulting rate bound caps what any policy
    can deliver, and the implied time shares must fit into one frame.
    """
    floors_dl, floors_ul = _floors_internal(cfg)
    a_need = 0.0
    b_need = 0.0
    for kk in range(cfg.n_ues):
        if floors_dl[kk] > 0.0:
            cap = float(np.sum(np.log2(1.0 + eff.g_bs * cfg.p_bs_max_w
                                       + eff.g_sue[:, kk] * cfg.p_sudas_dl_total_w)))
            if cap <= 0.0 or floors_dl[kk] > cap:
                raise ValueError(
                    f"minimum downlink rate for ue {kk} exceeds the link capacity bound")
            a_need += floors_dl[kk] / cap
        if floors_ul[kk] > 0.0:
            cap = float(np.sum(np.log2(1.0 + eff.g_ues[:, kk] * cfg.p_ue_max_w
                                       + eff.g_sb * cfg.p_sudas_ul_total_w)))
            if cap <= 0.0 or floors_ul[kk] > cap:
                raise ValueError(
                    f"minimum uplink rate for ue {kk} exceeds the link capacity bound")
            b_need += floors_ul[kk] / cap
    if a_need + b_need > 1.0:
        raise ValueError("rate floors exceed the available time-sharing budget")


def _policy_from_state(state, eff, cfg):
    n_f, n_s = eff.g_bs.shape
    pol = AllocationPolicy.zeros(cfg, n_s)
    pol.alpha, pol.beta = float(state.alpha), float(state.beta)
    rows = np.arange(n_f)
    pol.s_dl[rows, state.win_dl] = pol.alpha
    pol.s_ul[rows, state.win_ul] = pol.beta
    pol.e_bs[rows, state.win_dl, :] = pol.alpha * state.p_bs
    pol.e_sue[rows, state.win_dl, :] = pol.alpha * state.p_sue
    pol.e_ues[rows, state.win_ul, :] = pol.beta * state.p_ues
    pol.e_sb[rows, state.win_ul, :] = pol.beta * state.p_sb
    return pol


def _rate_mode(variant):
    return "approx" if variant == "optimal" else "exact"


def dinkelbach_solve(eff, cfg: SystemConfig, variant="optimal",
                     options: SolverOptions | None = None):
    """Full energy-efficiency maximization for one channel realization.

    Runs the fractional-programming outer loop around the guarded
    alternating-optimization inner solver. The eta trajectory is
    nondecreasing; iteration stops once the inner score U - eta*U_TP
    falls below ``eta_tolerance`` (internal rate units), after which the
    final eta equals the returned policy's throughput/power ratio.
    """
    if variant not in _VARIANTS:
        raise ValueError("variant must be 'optimal' or 'suboptimal'")
    opts = options or SolverOptions()
    check_feasibility(eff, cfg)
    bw = cfg.subcarrier_bandwidth_hz
    eta = 0.0
    trajectory = [0.0]
    ee_curve = []
    best_ee = 0.0
    best = None
    total_sweeps = 0
    final_gap = np.inf
    for t in range(opts.max_outer):
        kappa = max(opts.inner_tolerance, opts.kappa_base * (opts.kappa_decay ** t))
        cand, info = solve_fixed_eta(eff, cfg, eta, variant, opts, best, kappa)
        total_sweeps += info["sweeps"]
        for (uu, pp), ok in zip(info["ee_points"], info["floor_ok"]):
            if ok:
                best_ee = max(best_ee, bw * uu / pp)
            ee_curve.append(best_ee)
        if not _floors_met(cand, eff, cfg, variant, slack=1e-6):
            if best is None:
                raise ValueError(
                    "rate floor constraints could not be satisfied by the solver")
            final_gap = 0.0
            break
        _, u, u_tp, _, _ = _objective(cand, eff, cfg, eta, variant)
        final_gap = u - eta * u_tp
        if final_gap > 0.0 or best is None:
            best = cand
            eta = u / u_tp
            trajectory.append(eta)
        if abs(final_gap) < opts.eta_tolerance:
            break
        if opts.max_aggregate is not None and total_sweeps >= opts.max_aggregate:
            break
    if best is None:
        raise ValueError("rate floor constraints could not be satisfied by the solver")
    policy = _policy_from_state(best, eff, cfg)
    mode = _rate_mode(variant)
    _, u, u_tp, _, _ = _objective(best, eff, cfg, 0.0, variant)
    residuals = model.feasibility(policy, eff, cfg, mode=mode)
    return SolveReport(
        eta_trajectory=np.asarray(trajectory),
        final_policy=policy,
        throughput=float(bw * u),
        power=float(u_tp),
        ee=float(bw * u / u_tp),
        constraint_residuals=residuals,
        iterations_used=total_sweeps,
        ee_curve=np.asarray(ee_curve),
        final_gap=float(final_gap),
        rate_mode=mode,
    )


def throughput_solve(eff, cfg: SystemConfig, variant="optimal",
                     options: SolverOptions | None = None):
    """Throughput maximization for one channel realization.

    A single guarded inner solve at energy price zero; the budget duals
    then spend the power limits in full and the score being climbed is
    the weighted sum rate itself.
    """
    if variant not in _VARIANTS:
        raise ValueError("variant must be 'optimal' or 'suboptimal'")
    opts = options or SolverOptions()
    check_feasibility(eff, cfg)
    bw = cfg.subcarrier_bandwidth_hz
    best, info = solve_fixed_eta(eff, cfg, 0.0, variant, opts, None,
                                 opts.inner_tolerance)
    if not _floors_met(best, eff, cfg, variant, slack=1e-6):
        raise ValueError(
            "rate floor constraints could not be satisfied by the solver")
    ee_curve = []
    best_ee = 0.0
    for (uu, pp), ok in zip(info["ee_points"], info["floor_ok"]):
        if ok:
            best_ee = max(best_ee, bw * uu / pp)
        ee_curve.append(best_ee)
    policy = _policy_from_state(best, eff, cfg)
    mode = _rate_mode(variant)
    _, u, u_tp, _, _ = _objective(best, eff, cfg, 0.0, variant)
    residuals = model.feasibility(policy, eff, cfg, mode=mode)
    return SolveReport(
        eta_trajectory=np.asarray([u / u_tp]),
        final_policy=policy,
        throughput=float(bw * u),
        power=float(u_tp),
        ee=float(bw * u / u_tp),
        constraint_residuals=residuals,
        iterations_used=info["sweeps"],
        ee_curve=np.asarray(ee_curve),
        final_gap=0.0,
        rate_mode=mode,
    )
