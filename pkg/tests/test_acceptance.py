"""Acceptance suite: end-to-end checks of the advertised guarantees.

Each test pins its tolerances, trial counts, and (where one is set) its
runtime budget. These are slower than the unit suites: the whole module
takes several minutes on one core.
"""

import time

import numpy as np
import pytest

from sudasim import (baselines, channel, harness, model, numerics, oracle,
                     precoder, solver)
from sudasim.model import LN2


def _realization(cfg, seed):
    ch = channel.generate(cfg, np.random.default_rng(seed))
    return ch, channel.effective_cnrs(ch, cfg)


# =========================================================================
# precoder structure
# =========================================================================

def test_precoders_diagonalize_and_match_scalar_rates():
    cfg = model.SystemConfig(n_subcarriers=1, n_ues=1, n_sudacs=4,
                             n_bs_antennas=4, r_min_dl_bps=(0.0,),
                             r_min_ul_bps=(0.0,))
    rng = np.random.default_rng(101)
    start = time.monotonic()
    for _ in range(1000):
        ch = channel.generate(cfg, rng)
        eff = channel.effective_cnrs(ch, cfg)
        fac = channel.svd_factors(ch, 0, 0)
        n_s = 2
        p_bs = rng.uniform(0.05, 0.5, n_s)
        p_ue = rng.uniform(0.05, 0.5, n_s)
        g1 = eff.g_bs[0, :n_s]
        g2 = eff.g_sue[0, 0, :n_s]
        p_fwd_dl = rng.uniform(0.05, 0.5, n_s)
        p_fwd_ul = rng.uniform(0.05, 0.5, n_s)
        pset = precoder.build(fac, p_bs, p_fwd_dl / (1.0 + g1 * p_bs),
                              p_ue, p_fwd_ul / (1.0 + g2 * p_ue))

        gamma, theta = precoder.effective_dl(ch, pset, 0, 0)
        e = precoder.mse_matrix(gamma, theta)
        assert numerics.offdiag_ratio(e) <= 1e-9
        want = float(np.sum(model.rate_exact_dl(g1, g2, p_bs, p_fwd_dl)))
        assert -numerics.logdet_hpd(e) == pytest.approx(want, rel=1e-9,
                                                        abs=1e-12)

        gamma_u, theta_u = precoder.effective_ul(ch, pset, 0, 0)
        e_u = precoder.mse_matrix(gamma_u, theta_u)
        assert numerics.offdiag_ratio(e_u) <= 1e-9
        want_u = float(np.sum(model.rate_exact_ul(g2, g1, p_ue, p_fwd_ul)))
        assert -numerics.logdet_hpd(e_u) == pytest.approx(want_u, rel=1e-9,
                                                          abs=1e-12)
    assert time.monotonic() - start < 10.0


# =========================================================================
# closed-form power updates
# =========================================================================

# (function, SINR form of its surrogate, whether it swaps the two hops)
_CLOSED_FORMS = (
    (solver.dl_power_bs, "approx", False),
    (solver.dl_power_sudas, "approx", True),
    (solver.ul_power_ue, "approx", False),
    (solver.ul_power_sudas, "approx", True),
    (solver.suboptimal_dl_power_bs, "exact", False),
    (solver.suboptimal_dl_power_sudas, "exact", True),
    (solver.suboptimal_ul_power_ue, "exact", False),
    (solver.suboptimal_ul_power_sudas, "exact", True),
)


def _surrogate(p, g_own, g_other, p_other, w, price, mode):
    sinr = model.sinr_approx if mode == "approx" else model.sinr_exact
    s = sinr(g_own, g_other, p, p_other)
    return (1.0 + w) * np.log2(1.0 + s) - price * p


def test_closed_form_powers_match_golden_section_reference():
    start = time.monotonic()
    for i, (fn, mode, swapped) in enumerate(_CLOSED_FORMS):
        rng = np.random.default_rng(202 + i)
        a = 10.0 ** rng.uniform(-2.0, 4.0, 10_000)
        b = 10.0 ** rng.uniform(-2.0, 4.0, 10_000)
        p_other = 10.0 ** rng.uniform(-4.0, 1.0, 10_000)
        w = rng.uniform(0.0, 3.0, 10_000)
        price = 10.0 ** rng.uniform(-2.0, 3.0, 10_000)
        g_own, g_other = (b, a) if swapped else (a, b)
        # beyond the water level the slope is negative, so this brackets
        hi = 2.0 * ((1.0 + w) / (price * LN2) + 1.0 / g_own
                    + g_other * p_other / g_own)
        _, v_ref = oracle.golden_max(
            lambda p: _surrogate(p, g_own, g_other, p_other, w, price, mode),
            np.zeros_like(hi), hi, tol=1e-12)
        # zero power is always admissible
        v_ref = np.maximum(v_ref, 0.0)
        p_closed = fn(a, b, p_other, w, price)
        v_closed = _surrogate(p_closed, g_own, g_other, p_other, w, price,
                              mode)
        scale = np.maximum(1.0, np.abs(v_ref))
        assert np.all(v_closed >= v_ref - 1e-9 * scale)
        assert np.all(np.abs(v_closed - v_ref) <= 1e-6 * scale)
    assert time.monotonic() - start < 30.0


# =========================================================================
# fractional-programming outer loop
# =========================================================================

def test_outer_loop_terminates_with_consistent_ratio():
    dims = np.random.default_rng(303)
    for trial in range(100):
        variant = "optimal" if trial % 2 == 0 else "suboptimal"
        n_f = int(dims.choice([16, 32, 64]))
        k = int(dims.choice([2, 4]))
        floors = (20e6 * n_f / 1200.0,) + (0.0,) * (k - 1)
        cfg = model.desk_config(n_subcarriers=n_f,
                                n_sudacs=int(dims.choice([2, 4, 8])),
                                n_ues=k, r_min_dl_bps=floors,
                                r_min_ul_bps=floors)
        _, eff = _realization(cfg, 3000 + trial)
        rep = solver.dinkelbach_solve(eff, cfg, variant)
        traj = np.asarray(rep.eta_trajectory)
        assert np.all(np.diff(traj) >= -1e-12)
        assert abs(rep.final_gap) < 1e-6
        bw = cfg.subcarrier_bandwidth_hz
        assert rep.ee == pytest.approx(bw * traj[-1], rel=1e-9)
        tput = model.throughput(rep.final_policy, eff, cfg,
                                mode=rep.rate_mode)
        power = model.power_consumption(rep.final_policy, cfg)
        assert rep.ee == pytest.approx(tput / power, rel=1e-9)


# =========================================================================
# global optimality on enumerable instances
# =========================================================================

def test_optimal_variant_attains_exhaustive_oracle():
    start = time.monotonic()
    dims = np.random.default_rng(404)
    for trial in range(50):
        cfg = model.desk_config(n_bs_antennas=2,
                                n_sudacs=int(dims.choice([1, 2])),
                                n_ues=2,
                                n_subcarriers=int(dims.choice([4, 6, 8])),
                                r_min_dl_bps=(0.0, 0.0),
                                r_min_ul_bps=(0.0, 0.0))
        _, eff = _realization(cfg, 4000 + trial)
        _, ee_oracle = oracle.exhaustive_small(eff, cfg)
        rep = solver.dinkelbach_solve(eff, cfg, "optimal")
        assert rep.ee >= 0.99 * ee_oracle
    assert time.monotonic() - start < 600.0


# =========================================================================
# convergence against the noise-free bound
# =========================================================================

def _bound_ratio_after_twenty(variant, cfg, seed):
    _, eff = _realization(cfg, seed)
    rep = solver.dinkelbach_solve(eff, cfg, variant)
    curve = np.asarray(rep.ee_curve)
    bound = baselines.noise_free_upper_bound(eff, cfg)
    return float(curve[min(19, curve.size - 1)] / bound)


def test_reaches_noise_free_bound_within_twenty_iterations():
    cfg_high = model.desk_config()
    ratios = [_bound_ratio_after_twenty("optimal", cfg_high, 5000 + t)
              for t in range(200)]
    assert np.mean(np.asarray(ratios) >= 0.99) >= 0.90

    cfg_low = model.desk_config(p_bs_max_w=10.0 ** (19.0 / 10.0) / 1000.0)
    ratios = [_bound_ratio_after_twenty("suboptimal", cfg_low, 5500 + t)
              for t in range(200)]
    assert np.mean(np.asarray(ratios) >= 0.85) >= 0.90


# =========================================================================
# sweep-level behavior
# =========================================================================

def test_energy_efficiency_saturates_at_high_budget():
    spec = harness.preset_spec("ee_vs_pt", trials=12, master_seed=606,
                               desk_scale=True,
                               systems=(("sudas_optimal", "ee_max"),))
    rows = harness.run(spec)
    ee = {row["sweep"]: row["ee_bits_per_joule"] for row in rows}
    assert ee[46.0] <= 1.03 * ee[37.0]
    curve = [ee[v] for v in sorted(ee)]
    # paired trials: the same channels see a growing budget, so the mean
    # curve is monotone up to inner-solver tolerance
    for lo, hi in zip(curve, curve[1:]):
        assert hi >= lo * (1.0 - 1e-6)


def test_system_orderings_at_high_budget():
    spec = harness.preset_spec("custom", trials=12, master_seed=707,
                               desk_scale=True,
                               sweep_variable="p_bs_max_dbm",
                               sweep_values=(40.0, 46.0),
                               systems=(("sudas_optimal", "ee_max"),
                                        ("sudas_optimal", "tp_max"),
                                        ("mimo_benchmark", "ee_max"),
                                        ("no_sudas", "ee_max")))
    rows = harness.run(spec)
    ee = {(r["sweep"], r["system"], r["objective"]): r["ee_bits_per_joule"]
          for r in rows}
    tput = {(r["sweep"], r["system"], r["objective"]): r["throughput_bps"]
            for r in rows}
    for pt in (40.0, 46.0):
        assert ee[(pt, "sudas_optimal", "ee_max")] >= \
            0.7 * ee[(pt, "mimo_benchmark", "ee_max")]
        assert ee[(pt, "sudas_optimal", "ee_max")] >= \
            2.0 * ee[(pt, "no_sudas", "ee_max")]
        assert tput[(pt, "sudas_optimal", "tp_max")] > \
            tput[(pt, "sudas_optimal", "ee_max")]


def test_more_sudacs_never_hurt():
    spec = harness.preset_spec("ee_vs_m", trials=10, master_seed=808,
                               desk_scale=True,
                               systems=(("sudas_optimal", "ee_max"),))
    rows = harness.run(spec)
    rows.sort(key=lambda r: r["sweep"])
    ees = [r["ee_bits_per_joule"] for r in rows]
    tputs = [r["throughput_bps"] for r in rows]
    for lo, hi in zip(ees, ees[1:]):
        assert hi >= lo * (1.0 - 1e-6)
    for lo, hi in zip(tputs, tputs[1:]):
        assert hi >= lo * (1.0 - 1e-6)


# =========================================================================
# constraint hygiene of every returned policy
# =========================================================================

def _hygiene(rep, cfg):
    res = rep.constraint_residuals
    assert res["C1"] <= 1e-6 * cfg.p_bs_max_w
    assert res["C2"] <= 1e-6 * cfg.p_sudas_dl_total_w
    assert res["C3"] <= 1e-6 * cfg.p_ue_max_w
    assert res["C4"] <= 1e-6 * cfg.p_sudas_ul_total_w
    floor_scale = max(max(cfg.r_min_dl_bps, default=0.0),
                      max(cfg.r_min_ul_bps, default=0.0), 1.0)
    assert res["C5"] <= 1e-6 * floor_scale
    assert res["C6"] <= 1e-6 * floor_scale
    pol = rep.final_policy
    assert pol.alpha + pol.beta <= 1.0 + 1e-12
    assert pol.alpha >= 0.0 and pol.beta >= 0.0
    for s, share in ((pol.s_dl, pol.alpha), (pol.s_ul, pol.beta)):
        near_zero = np.abs(s) <= 1e-12
        near_share = np.abs(s - share) <= 1e-12 * max(1.0, share)
        assert np.all(near_zero | near_share)


def test_returned_policies_pass_constraint_hygiene():
    for trial in range(12):
        cfg = model.desk_config()
        ch, eff = _realization(cfg, 9000 + trial)
        kind = trial % 6
        if kind == 0:
            rep = solver.dinkelbach_solve(eff, cfg, "optimal")
        elif kind == 1:
            rep = solver.dinkelbach_solve(eff, cfg, "suboptimal")
        elif kind == 2:
            rep = solver.throughput_solve(eff, cfg, "optimal")
        else:
            tag = "mimo_benchmark" if kind in (3, 4) else "no_sudas"
            objective = "tp_max" if kind == 4 else "ee_max"
            rep = baselines.solve_baseline(
                baselines.BaselineKind.of(tag, cfg, objective=objective),
                ch, cfg)
        _hygiene(rep, cfg)
        if kind <= 2:
            res = model.feasibility(rep.final_policy, eff, cfg,
                                    mode=rep.rate_mode)
            assert res == rep.constraint_residuals


# =========================================================================
# inner-loop monotone ascent
# =========================================================================

def test_inner_objective_nondecreasing_across_sweeps():
    dims = np.random.default_rng(1010)
    for trial in range(100):
        k = int(dims.choice([1, 2, 3]))
        cfg = model.desk_config(n_subcarriers=int(dims.choice([4, 8, 16])),
                                n_ues=k, n_sudacs=int(dims.choice([2, 4])),
                                r_min_dl_bps=(0.0,) * k,
                                r_min_ul_bps=(0.0,) * k)
        _, eff = _realization(cfg, 10_000 + trial)
        eta = 0.0 if trial % 4 == 0 else float(dims.uniform(1.0, 100.0))
        _, info = solver.inner_solve(eff, cfg, eta, "suboptimal")
        curve = np.asarray(info["objective_curve"])
        slack = 1e-9 * np.maximum(1.0, np.abs(curve[:-1]))
        assert np.all(np.diff(curve) >= -slack)


# =========================================================================
# reproducibility
# =========================================================================

def test_csv_bytes_identical_across_worker_counts(tmp_path):
    kwargs = dict(trials=3, master_seed=1111, desk_scale=True,
                  sweep_variable="p_bs_max_dbm", sweep_values=(31.0, 40.0),
                  systems=(("sudas_optimal", "ee_max"),
                           ("no_sudas", "ee_max")),
                  config_overrides=(("n_subcarriers", 16), ("n_ues", 2),
                                    ("n_sudacs", 2),
                                    ("r_min_dl_bps", (0.0, 0.0)),
                                    ("r_min_ul_bps", (0.0, 0.0))))
    paths = []
    for workers, name in ((1, "serial.csv"), (3, "pooled.csv")):
        rows = harness.run(harness.preset_spec("custom", **kwargs),
                           workers=workers)
        path = tmp_path / name
        harness.write_csv(rows, path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
