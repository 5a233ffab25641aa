"""Reference-system tests: water-filling structure against the KKT
conditions, orderings between the systems, and report hygiene."""

import numpy as np
import pytest

from sudasim import baselines, channel, solver
from sudasim.baselines import (BaselineKind, baseline_cnrs,
                               noise_free_upper_bound, solve_baseline)
from sudasim.model import desk_config


def _realization(seed, **overrides):
    cfg = desk_config(**overrides)
    rng = np.random.default_rng(seed)
    ch = channel.generate(cfg, rng)
    return cfg, ch


def _recomputed_throughput(rep, g, bw):
    # winners are implicit: energy is nonzero only on won subcarriers
    pol = rep.final_policy
    tput = 0.0
    if pol.alpha > 0.0:
        tput += pol.alpha * np.log2(1.0 + g * pol.e_bs / pol.alpha).sum()
    if pol.beta > 0.0:
        tput += pol.beta * np.log2(1.0 + g * pol.e_ues / pol.beta).sum()
    return bw * tput


class TestBaselineKind:
    def test_rejects_unknown_tag(self):
        with pytest.raises(ValueError):
            BaselineKind("relay_assisted")

    def test_rejects_unknown_objective(self):
        with pytest.raises(ValueError):
            BaselineKind("no_sudas", objective="min_power")

    def test_antenna_count_constraints(self):
        with pytest.raises(ValueError):
            BaselineKind("no_sudas", n_ue_antennas=2)
        with pytest.raises(ValueError):
            BaselineKind("mimo_benchmark", n_ue_antennas=1)

    def test_of_matches_config(self):
        cfg = desk_config()
        assert BaselineKind.of("mimo_benchmark", cfg).n_ue_antennas == cfg.n_bs_antennas
        assert BaselineKind.of("no_sudas", cfg).n_ue_antennas == 1


class TestBaselineCnrs:
    def test_benchmark_matches_gram_eigenvalues(self):
        cfg, ch = _realization(101)
        g = baseline_cnrs(ch, cfg, BaselineKind.of("mimo_benchmark", cfg))
        n_f, k = g.shape[:2]
        for n in (0, n_f // 2, n_f - 1):
            for kk in range(k):
                h = ch.h_direct[n, kk]
                ev = np.sort(np.linalg.eigvalsh(h.conj().T @ h))[::-1]
                np.testing.assert_allclose(np.sort(g[n, kk])[::-1], ev,
                                           rtol=1e-9, atol=1e-12)

    def test_single_antenna_is_row_gain(self):
        cfg, ch = _realization(102)
        g = baseline_cnrs(ch, cfg, BaselineKind.of("no_sudas", cfg))
        assert g.shape == (cfg.n_subcarriers, cfg.n_ues, 1)
        np.testing.assert_allclose(
            g[..., 0], np.sum(np.abs(ch.h_direct[:, :, 0, :]) ** 2, axis=-1),
            rtol=1e-12)

    def test_benchmark_total_gain_dominates(self):
        cfg, ch = _realization(103)
        g_bm = baseline_cnrs(ch, cfg, BaselineKind.of("mimo_benchmark", cfg))
        g_single = baseline_cnrs(ch, cfg, BaselineKind.of("no_sudas", cfg))
        assert np.all(g_bm.sum(axis=-1) >= g_single[..., 0] - 1e-12)

    def test_antenna_mismatch_raises(self):
        cfg, ch = _realization(104)
        kind = BaselineKind("mimo_benchmark", n_ue_antennas=cfg.n_bs_antennas + 1)
        with pytest.raises(ValueError):
            baseline_cnrs(ch, cfg, kind)


class TestWaterFillingStructure:
    """On one subcarrier and one UE the block optimum is plain water-filling:
    active streams share one water level, inactive streams sit above it, and
    at zero energy price the budget is spent exactly."""

    @pytest.mark.parametrize("objective", ["tp_max", "ee_max"])
    def test_common_water_level(self, objective):
        cfg, ch = _realization(111, n_subcarriers=1, n_ues=1,
                               r_min_dl_bps=(), r_min_ul_bps=())
        kind = BaselineKind.of("mimo_benchmark", cfg, objective)
        rep = solve_baseline(kind, ch, cfg)
        g = baseline_cnrs(ch, cfg, kind)[0, 0]
        pol = rep.final_policy
        for e, share in ((pol.e_bs[0, 0], pol.alpha), (pol.e_ues[0, 0], pol.beta)):
            if share <= 0.0:
                continue
            p = e / share
            active = p > 1e-9
            assert np.any(active)
            levels = p[active] + 1.0 / g[active]
            assert np.ptp(levels) <= 1e-6 * levels.max()
            if np.any(~active):
                assert np.min(1.0 / g[~active]) >= levels.max() * (1.0 - 1e-6)

    def test_zero_price_spends_the_budgets(self):
        cfg, ch = _realization(112, r_min_dl_bps=(), r_min_ul_bps=())
        rep = solve_baseline(BaselineKind.of("no_sudas", cfg, "tp_max"), ch, cfg)
        pol = rep.final_policy
        assert pol.e_bs.sum() == pytest.approx(cfg.p_bs_max_w, rel=1e-6)
        per_ue = pol.e_ues.sum(axis=(0, 2))
        won = np.array([np.any(pol.s_ul[:, kk] > 0.0) for kk in range(cfg.n_ues)])
        assert np.all(per_ue[won] == pytest.approx(cfg.p_ue_max_w, rel=1e-6))
        assert np.all(per_ue[~won] == 0.0)
        assert rep.throughput > 0.0

    def test_zero_channel_means_zero_throughput(self):
        cfg, ch = _realization(113, r_min_dl_bps=(), r_min_ul_bps=())
        ch.h_direct[:] = 0.0
        rep = solve_baseline(BaselineKind.of("no_sudas", cfg), ch, cfg)
        assert rep.throughput == 0.0
        assert rep.ee == 0.0
        assert np.isfinite(rep.power) and rep.power > 0.0


class TestSystemOrderings:
    @pytest.mark.parametrize("seed", [121, 122, 123])
    def test_multi_antenna_ue_beats_single_antenna(self, seed):
        cfg, ch = _realization(seed)
        ee_bm = solve_baseline(BaselineKind.of("mimo_benchmark", cfg), ch, cfg).ee
        ee_single = solve_baseline(BaselineKind.of("no_sudas", cfg), ch, cfg).ee
        assert ee_bm >= ee_single * (1.0 - 1e-9)

    @pytest.mark.parametrize("seed", [124, 125, 126])
    def test_noise_free_bound_dominates_both_variants(self, seed):
        cfg, ch = _realization(seed)
        eff = channel.effective_cnrs(ch, cfg)
        ub = noise_free_upper_bound(eff, cfg)
        for variant in ("optimal", "suboptimal"):
            rep = solver.dinkelbach_solve(eff, cfg, variant)
            assert ub >= rep.ee * (1.0 - 1e-9), (variant, rep.ee, ub)

    @pytest.mark.parametrize("tag", ["mimo_benchmark", "no_sudas"])
    def test_objectives_trade_places(self, tag):
        cfg, ch = _realization(127)
        rep_ee = solve_baseline(BaselineKind.of(tag, cfg, "ee_max"), ch, cfg)
        rep_tp = solve_baseline(BaselineKind.of(tag, cfg, "tp_max"), ch, cfg)
        assert rep_tp.throughput >= rep_ee.throughput * (1.0 - 1e-9)
        assert rep_ee.ee >= rep_tp.ee * (1.0 - 1e-9)


class TestReportHygiene:
    @pytest.mark.parametrize("tag", ["mimo_benchmark", "no_sudas"])
    @pytest.mark.parametrize("objective", ["ee_max", "tp_max"])
    def test_reports_are_consistent(self, tag, objective):
        cfg, ch = _realization(131)
        kind = BaselineKind.of(tag, cfg, objective)
        rep = solve_baseline(kind, ch, cfg)
        assert rep.rate_mode == "exact"
        assert set(rep.constraint_residuals) == {f"C{i}" for i in range(1, 13)}
        floor_scale = max(max(cfg.r_min_dl_bps), max(cfg.r_min_ul_bps), 1.0)
        for name, val in rep.constraint_residuals.items():
            scale = floor_scale if name in ("C5", "C6") else 1.0
            assert val <= 1e-6 * scale, (name, val)
        assert rep.ee == pytest.approx(rep.throughput / rep.power, rel=1e-12)
        g = baseline_cnrs(ch, cfg, kind)
        tput = _recomputed_throughput(rep, g, cfg.subcarrier_bandwidth_hz)
        assert rep.throughput == pytest.approx(tput, rel=1e-9)
        pol = rep.final_policy
        assert np.all(np.count_nonzero(pol.s_dl, axis=1) <= 1)
        assert np.all(np.count_nonzero(pol.s_ul, axis=1) <= 1)

    def test_ee_max_trajectory_monotone(self):
        cfg, ch = _realization(132)
        rep = solve_baseline(BaselineKind.of("mimo_benchmark", cfg), ch, cfg)
        traj = np.asarray(rep.eta_trajectory)
        assert np.all(np.diff(traj) >= -1e-12)
        assert abs(rep.final_gap) < 1e-6
        assert rep.ee == pytest.approx(
            cfg.subcarrier_bandwidth_hz * traj[-1], rel=1e-9)

    def test_unreachable_floor_raises(self):
        # a floor far past the single-hop capacity must fail fast
        cfg, ch = _realization(133, r_min_dl_bps=(1e12, 0.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            solve_baseline(BaselineKind.of("no_sudas", cfg), ch, cfg)
