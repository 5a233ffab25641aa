"""Reference optimizers used to validate the closed forms and the solver.

Two tools live here:

- :func:`golden_max`, a vectorized golden-section maximizer for unimodal
  scalar functions, used to check the closed-form power updates.
- :func:`exhaustive_small`, a brute-force search over subcarrier
  assignments, per-tuple energy grids, and a time-split grid, tied together
  by a fractional-programming outer loop and budget-multiplier bisections.
  Every candidate it considers is feasible by construction, so the returned
  efficiency can only undershoot the true optimum; the solver is compared
  against it one-sidedly.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
import numpy as np

from .model import AllocationPolicy, SystemConfig


# =========================================================================
# golden-section search
# =========================================================================

def golden_max(fun, lo, hi, tol=1e-12, max_iters=200):
    """Maximize a unimodal function on [lo, hi] by golden-section search.

    Parameters
    ----------
    fun : callable
        Elementwise function of a float ndarray (scalars work too).
    lo, hi : array_like
        Bracket endpoints, broadcast together; lo <= hi required.
    tol : float
        Stop once every bracket has shrunk to tol * its initial width.

    Returns
    -------
    (x, fx) : bracket midpoints after convergence and the function there.
    """
    a, b = np.broadcast_arrays(np.asarray(lo, dtype=float),
                               np.asarray(hi, dtype=float))
    a = a.copy()
    b = b.copy()
    if np.any(b < a):
        raise ValueError("golden_max requires lo <= hi")
    width0 = np.maximum(b - a, 1e-300)
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc = np.asarray(fun(c), dtype=float)
    fd = np.asarray(fun(d), dtype=float)
    for _ in range(max_iters):
        if np.all(b - a <= tol * width0):
            break
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c = b - inv * (b - a)
        d = a + inv * (b - a)
        fc = np.asarray(fun(c), dtype=float)
        fd = np.asarray(fun(d), dtype=float)
    x = 0.5 * (a + b)
    return x, np.asarray(fun(x), dtype=float)


# =========================================================================
# exhaustive reference optimizer
# =========================================================================

@dataclass
class OracleGrids:
    """Search granularity for :func:`exhaustive_small`.

    refine densifies the power grids by inserting midpoints, so a refined
    grid is a superset of the coarse one and the search value can only grow.
    """

    n_power: int = 32
    alpha_step: float = 0.05
    refine: int = 1
    mode: str = "auto"          # "auto" | "dual" | "enumerate"
    rate_mode: str = "approx"   # SINR form used in the objective
    eta_tol: float = 1e-9
    max_eta_iters: int = 40
    bisect_iters: int = 44
    rounds: int = 3


_SIZE_MSG = ("instance too large for exhaustive search "
             "(need n_ues <= 2, n_subcarriers <= 16, streams <= 2)")


def _energy_grid(budget, n_power, refine):
    pts = (n_power - 1) * refine + 1
    return np.concatenate(([0.0], np.geomspace(budget * 1e-7, budget, pts)))


def _pair_values(alpha, s_prod, s_sum, mode):
    # time-shared value alpha * log2(1 + SINR(e / alpha)) on the energy grid;
    # s_prod = (g1 e1)(g2 e2) and s_sum = g1 e1 + g2 e2 are alpha-free
    a = alpha[:, None, None, None, None, None]
    a_safe = np.where(a > 0.0, a, 1.0)
    if mode == "approx":
        sinr = np.where(s_sum > 0.0, s_prod / np.where(s_sum > 0.0, s_sum, 1.0), 0.0)
        out = a * np.log2(1.0 + sinr[None] / a_safe)
    else:
        den = a_safe * (a_safe + s_sum[None])
        out = a * np.log2(1.0 + s_prod[None] / den)
    return np.where(a > 0.0, out, 0.0)


class _LinkTables:
    """Per-link tables value[a, i, k, n, c1, c2] plus the two energy grids."""

    def __init__(self, alpha, g1, g2, budget1, budget2, grids, rate_mode):
        # g1, g2: per-tuple channel gains, both shaped (n_f, k, n_s)
        self.e1 = _energy_grid(budget1, grids.n_power, grids.refine)
        self.e2 = _energy_grid(budget2, grids.n_power, grids.refine)
        a1 = g1[:, :, :, None] * self.e1[None, None, None, :]
        a2 = g2[:, :, :, None] * self.e2[None, None, None, :]
        s_prod = a1[:, :, :, :, None] * a2[:, :, :, None, :]
        s_sum = a1[:, :, :, :, None] + a2[:, :, :, None, :]
        self.value = _pair_values(alpha, s_prod, s_sum, rate_mode)
        self.n_f, self.k, self.n_s = g1.shape

    def _cost1_axis(self, cost1, trailing):
        # cost1 is (a,) or (a, k); insert axes to line up with value
        if cost1.ndim == 2:
            return cost1.reshape(cost1.shape[0], 1, cost1.shape[1],
                                 *([1] * trailing))
        return cost1.reshape(cost1.shape[0], *([1] * (trailing + 2)))

    def sweep_cost1(self, cost1, cost2):
        """Fold cost2 out, then score against cost1; returns scores and c1."""
        best2 = np.max(self.value - cost2[:, None, None, None, None, None]
                       * self.e2[None, None, None, None, None, :], axis=5)
        scored = best2 - self._cost1_axis(cost1, 2) * self.e1[None, None, None, None, :]
        idx = np.argmax(scored, axis=4)
        score = np.take_along_axis(scored, idx[..., None], axis=4)[..., 0]
        return score, idx

    def sweep_cost2(self, cost1, cost2):
        """Fold cost1 out, then score against cost2; returns scores and c2."""
        best1 = np.max(self.value - self._cost1_axis(cost1, 3)
                       * self.e1[None, None, None, None, :, None], axis=4)
        scored = best1 - cost2[:, None, None, None, None] * self.e2[None, None, None, None, :]
        idx = np.argmax(scored, axis=4)
        score = np.take_along_axis(scored, idx[..., None], axis=4)[..., 0]
        return score, idx

    def full_select(self, cost1, cost2):
        """Joint argmax over (c1, c2) per tuple: scores, e1, e2, rate value."""
        scored = (self.value
                  - self._cost1_axis(cost1, 3) * self.e1[None, None, None, None, :, None]
                  - cost2[:, None, None, None, None, None]
                  * self.e2[None, None, None, None, None, :])
        flat = scored.reshape(scored.shape[:4] + (-1,))
        idx = np.argmax(flat, axis=4)
        best = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
        i1, i2 = np.unravel_index(idx, (self.e1.size, self.e2.size))
        vflat = self.value.reshape(self.value.shape[:4] + (-1,))
        val = np.take_along_axis(vflat, idx[..., None], axis=4)[..., 0]
        return best, self.e1[i1], self.e2[i2], val


def _winners(score_tuple, forced):
    # score_tuple: (a, i, k, n) -> winning UE per (a, i)
    tot = np.sum(score_tuple, axis=3)
    if forced is not None:
        return np.broadcast_to(forced[None, :], tot.shape[:2]).copy()
    return np.argmax(tot, axis=2)


def _gather_winner(arr, win):
    # arr: (a, i, k, n); win: (a, i) -> (a, i, n)
    return np.take_along_axis(arr, win[:, :, None, None], axis=2)[:, :, 0, :]


class _LinkSolver:
    """Budget-multiplier bisection for one link, vectorized over alpha.

    Side 1 carries the per-UE budget when per_ue is set (uplink transmit
    energies); otherwise both sides are plain totals.
    """

    def __init__(self, tables, per_ue, budget1, budget2, eps1, eps2, grids, forced):
        self.t = tables
        self.per_ue = per_ue
        self.budget1 = budget1
        self.budget2 = budget2
        self.eps1 = eps1
        self.eps2 = eps2
        self.grids = grids
        self.forced = forced
        n_a = tables.value.shape[0]
        self.m1 = np.zeros((n_a, tables.k)) if per_ue else np.zeros(n_a)
        self.m2 = np.zeros(n_a)

    def _residual1(self, m1, eta):
        score, idx = self.t.sweep_cost1(m1 + eta * self.eps1, self.m2 + eta * self.eps2)
        win = _winners(score, self.forced)
        chosen = _gather_winner(self.t.e1[idx], win)
        if self.per_ue:
            res = np.empty((win.shape[0], self.t.k))
            for kk in range(self.t.k):
                mask = (win == kk)[:, :, None]
                res[:, kk] = np.sum(np.where(mask, chosen, 0.0), axis=(1, 2)) - self.budget1
            return res
        return np.sum(chosen, axis=(1, 2)) - self.budget1

    def _residual2(self, m2, eta):
        score, idx = self.t.sweep_cost2(self.m1 + eta * self.eps1, m2 + eta * self.eps2)
        win = _winners(score, self.forced)
        chosen = _gather_winner(self.t.e2[idx], win)
        return np.sum(chosen, axis=(1, 2)) - self.budget2

    def _bisect(self, residual_fn, shape_like, eta):
        """Smallest multiplier (per alpha) with residual <= 0, by bisection."""
        zero = np.zeros_like(shape_like)
        need = residual_fn(zero, eta) > 1e-12
        if not np.any(need):
            return zero
        hi = np.ones_like(shape_like)
        for _ in range(60):
            res = residual_fn(np.where(need, hi, 0.0), eta)
            still = need & (res > 0.0)
            if not np.any(still):
                break
            hi = np.where(still, hi * 4.0, hi)
        lo = zero.copy()
        for _ in range(self.grids.bisect_iters):
            mid = 0.5 * (lo + hi)
            res = residual_fn(np.where(need, mid, 0.0), eta)
            lo = np.where(need & (res > 0.0), mid, lo)
            hi = np.where(need & (res <= 0.0), mid, hi)
        return np.where(need, hi, 0.0)

    def solve(self, eta):
        for _ in range(self.grids.rounds):
            if self.per_ue:
                for kk in range(self.t.k):
                    def res_k(mk, eta_, kk=kk):
                        m = self.m1.copy()
                        m[:, kk] = mk
                        return self._residual1(m, eta_)[:, kk]
                    self.m1[:, kk] = self._bisect(res_k, self.m1[:, kk], eta)
            else:
                self.m1 = self._bisect(self._residual1, self.m1, eta)
            self.m2 = self._bisect(self._residual2, self.m2, eta)
        return self._finalize(eta)

    def _finalize(self, eta):
        score, e1, e2, val = self.t.full_select(self.m1 + eta * self.eps1,
                                                self.m2 + eta * self.eps2)
        win = _winners(score, self.forced)
        we1 = _gather_winner(e1, win)
        we2 = _gather_winner(e2, win)
        wval = _gather_winner(val, win)
        return {
            "win": win,
            "e1": we1,
            "e2": we2,
            "value": np.sum(wval, axis=(1, 2)),
            "sum_e1": np.sum(we1, axis=(1, 2)),
            "sum_e2": np.sum(we2, axis=(1, 2)),
        }


def _expand(mask, arr):
    return mask.reshape(mask.shape + (1,) * (arr.ndim - 1))


def exhaustive_small(eff, cfg: SystemConfig, grids: OracleGrids | None = None):
    """Brute-force reference solution for tiny instances.

    Returns (policy, ee) with ee in bit/joule. Instances are limited to
    2 UEs, 16 subcarriers, 2 streams, and no rate floors. mode="dual"
    prices the budgets and lets each subcarrier pick its UE; the literal
    mode="enumerate" walks every assignment (4 subcarriers at most).
    """
    grids = grids or OracleGrids()
    if cfg.n_ues > 2 or cfg.n_subcarriers > 16 or eff.n_s > 2:
        raise ValueError(_SIZE_MSG)
    if any(r > 0 for r in cfg.r_min_dl_bps) or any(r > 0 for r in cfg.r_min_ul_bps):
        raise ValueError("rate floors are not supported by the exhaustive oracle")
    if grids.rate_mode not in ("exact", "approx"):
        raise ValueError("rate_mode must be 'exact' or 'approx'")
    mode = "dual" if grids.mode == "auto" else grids.mode
    if mode not in ("dual", "enumerate"):
        raise ValueError("mode must be 'auto', 'dual', or 'enumerate'")
    if mode == "enumerate" and cfg.n_subcarriers > 4:
        raise ValueError("enumerate mode is limited to 4 subcarriers")

    steps = int(round(1.0 / grids.alpha_step))
    alpha = np.linspace(0.0, 1.0, steps + 1)
    beta = 1.0 - alpha

    g_bs_k = np.broadcast_to(eff.g_bs[:, None, :], eff.g_sue.shape).copy()
    g_sb_k = np.broadcast_to(eff.g_sb[:, None, :], eff.g_ues.shape).copy()
    dl = _LinkTables(alpha, g_bs_k, eff.g_sue, cfg.p_bs_max_w,
                     cfg.p_sudas_dl_total_w, grids, grids.rate_mode)
    ul = _LinkTables(beta, eff.g_ues, g_sb_k, cfg.p_ue_max_w,
                     cfg.p_sudas_ul_total_w, grids, grids.rate_mode)
    static = cfg.static_power_w()

    if mode == "dual":
        forced_list = [None]
    else:
        forced_list = [np.array(a, dtype=int)
                       for a in product(range(cfg.n_ues), repeat=cfg.n_subcarriers)]

    def solve_link(tables, per_ue, b1, b2, e1s, e2s, eta):
        best_net, best_out = None, None
        for forced in forced_list:
            solver = _LinkSolver(tables, per_ue, b1, b2, e1s, e2s, grids, forced)
            out = solver.solve(eta)
            net = out["value"] - eta * (e1s * out["sum_e1"] + e2s * out["sum_e2"])
            if best_net is None:
                best_net, best_out = net, out
            else:
                improve = net > best_net
                best_out = {key: np.where(_expand(improve, out[key]), out[key],
                                          best_out[key]) for key in out}
                best_net = np.maximum(net, best_net)
        return best_net, best_out

    eta = 0.0
    result = None
    for _ in range(grids.max_eta_iters):
        net_dl, out_dl = solve_link(dl, False, cfg.p_bs_max_w, cfg.p_sudas_dl_total_w,
                                    cfg.amp_slope_bs, cfg.amp_slope_sudas, eta)
        net_ul, out_ul = solve_link(ul, True, cfg.p_ue_max_w, cfg.p_sudas_ul_total_w,
                                    cfg.amp_slope_ue, cfg.amp_slope_sudas, eta)
        f_val = net_dl + net_ul - eta * static
        a_star = int(np.argmax(f_val))
        u = float(out_dl["value"][a_star] + out_ul["value"][a_star])
        u_tp = float(static
                     + cfg.amp_slope_bs * out_dl["sum_e1"][a_star]
                     + cfg.amp_slope_sudas * (out_dl["sum_e2"][a_star]
                                              + out_ul["sum_e2"][a_star])
                     + cfg.amp_slope_ue * out_ul["sum_e1"][a_star])
        result = (a_star, out_dl, out_ul, u, u_tp)
        if abs(float(f_val[a_star])) <= grids.eta_tol * max(1.0, abs(u)):
            break
        eta = u / u_tp

    a_star, out_dl, out_ul, u, u_tp = result
    policy = _build_policy(cfg, eff, alpha[a_star], out_dl, out_ul, a_star)
    return policy, float((u / u_tp) * cfg.subcarrier_bandwidth_hz)


def _build_policy(cfg, eff, alpha_val, out_dl, out_ul, a_star):
    pol = AllocationPolicy.zeros(cfg, eff.n_s)
    pol.alpha = float(alpha_val)
    pol.beta = float(1.0 - alpha_val)
    for i in range(cfg.n_subcarriers):
        kd = int(out_dl["win"][a_star, i])
        pol.s_dl[i, kd] = pol.alpha
        pol.e_bs[i, kd, :] = out_dl["e1"][a_star, i]
        pol.e_sue[i, kd, :] = out_dl["e2"][a_star, i]
        ku = int(out_ul["win"][a_star, i])
        pol.s_ul[i, ku] = pol.beta
        pol.e_ues[i, ku, :] = out_ul["e1"][a_star, i]
        pol.e_sb[i, ku, :] = out_ul["e2"][a_star, i]
    return pol
