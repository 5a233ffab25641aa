"""Tests for the matched precoder construction and MMSE processing."""

from __future__ import annotations

import numpy as np
import pytest

from sudasim import channel, model, numerics, precoder


def _draw(rng, n_f=1, k=1, m=4, n=4):
    cfg = model.SystemConfig(n_subcarriers=n_f, n_ues=k, n_sudacs=m, n_bs_antennas=n,
                             r_min_dl_bps=tuple(0.0 for _ in range(k)),
                             r_min_ul_bps=tuple(0.0 for _ in range(k)))
    return cfg, channel.generate(cfg, rng)


def _radiated(g_fwd, cnr_in, p_in):
    return g_fwd * (1.0 + cnr_in * p_in)


def test_build_shapes_and_diagonal_powers():
    rng = np.random.default_rng(0)
    cfg, ch = _draw(rng, m=4, n=3)
    fac = channel.svd_factors(ch, 0, 0)
    n_s = 2
    p_bs = np.array([0.5, 0.2])
    g_dl = np.array([0.1, 0.05])
    p_ue = np.array([0.3, 0.1])
    g_ul = np.array([0.2, 0.02])
    pset = precoder.build(fac, p_bs, g_dl, p_ue, g_ul)
    assert pset.p_dl.shape == (3, n_s)
    assert pset.f_dl.shape == (4, 4)
    assert pset.p_ul.shape == (4, n_s)
    assert pset.f_ul.shape == (4, 4)
    # orthonormal columns times sqrt powers: Gram matrices recover the powers
    assert np.allclose(pset.p_dl.conj().T @ pset.p_dl, np.diag(p_bs), atol=1e-12)
    assert np.allclose(pset.p_ul.conj().T @ pset.p_ul, np.diag(p_ue), atol=1e-12)
    # the forwarding matrices carry exactly the sqrt gain powers
    _, sf, _ = numerics.svd(pset.f_dl)
    assert np.allclose(sf[:n_s], np.sqrt(g_dl), atol=1e-12)
    _, sfu, _ = numerics.svd(pset.f_ul)
    assert np.allclose(sfu[:n_s], np.sqrt(g_ul), atol=1e-12)


def test_build_rejects_bad_powers_and_rank():
    rng = np.random.default_rng(1)
    cfg, ch = _draw(rng, m=2, n=2)
    fac = channel.svd_factors(ch, 0, 0)
    with pytest.raises(ValueError):
        precoder.build(fac, [-0.1, 0.1], [0.1, 0.1], [0.1, 0.1], [0.1, 0.1])
    with pytest.raises(ValueError):
        precoder.build(fac, [0.1], [0.1, 0.1], [0.1], [0.1])
    # rank-deficient forward hop: one dead forwarding node
    ch.h_sue[0, 0, 1, 1] = 0.0
    fac2 = channel.svd_factors(ch, 0, 0)
    with pytest.raises(ValueError):
        precoder.build(fac2, [0.1, 0.1], [0.1, 0.1], [0.1, 0.1], [0.1, 0.1])


def test_cascade_is_diagonalized_and_matches_scalar_rates():
    rng = np.random.default_rng(7)
    for _ in range(25):
        cfg, ch = _draw(rng, m=4, n=4)
        eff = channel.effective_cnrs(ch, cfg)
        fac = channel.svd_factors(ch, 0, 0)
        n_s = 2
        p_bs = rng.uniform(0.05, 0.5, n_s)
        p_ue = rng.uniform(0.05, 0.5, n_s)
        g1 = eff.g_bs[0, :n_s]
        g2 = eff.g_sue[0, 0, :n_s]
        # pick radiated forward budgets, convert to gain powers for the build
        p_fwd_dl = rng.uniform(0.05, 0.5, n_s)
        p_fwd_ul = rng.uniform(0.05, 0.5, n_s)
        g_dl = p_fwd_dl / (1.0 + g1 * p_bs)
        g_ul = p_fwd_ul / (1.0 + g2 * p_ue)
        pset = precoder.build(fac, p_bs, g_dl, p_ue, g_ul)

        gamma, theta = precoder.effective_dl(ch, pset, 0, 0)
        e = precoder.mse_matrix(gamma, theta)
        assert numerics.offdiag_ratio(e) <= 1e-9
        rate_matrix = -numerics.logdet_hpd(e)
        rate_scalar = float(np.sum(model.rate_exact_dl(g1, g2, p_bs, p_fwd_dl)))
        assert rate_matrix == pytest.approx(rate_scalar, rel=1e-9, abs=1e-12)

        gamma_u, theta_u = precoder.effective_ul(ch, pset, 0, 0)
        e_u = precoder.mse_matrix(gamma_u, theta_u)
        assert numerics.offdiag_ratio(e_u) <= 1e-9
        rate_matrix_u = -numerics.logdet_hpd(e_u)
        rate_scalar_u = float(np.sum(model.rate_exact_ul(g2, g1, p_ue, p_fwd_ul)))
        assert rate_matrix_u == pytest.approx(rate_scalar_u, rel=1e-9, abs=1e-12)

        # per-stream MSE diagonal equals 1/(1 + SINR)
        sinr = model.sinr_exact(g1, g2, p_bs, p_fwd_dl)
        assert np.allclose(np.real(np.diag(e)), 1.0 / (1.0 + sinr), rtol=1e-9)


def test_mmse_receiver_identity():
    rng = np.random.default_rng(3)
    cfg, ch = _draw(rng)
    fac = channel.svd_factors(ch, 0, 0)
    pset = precoder.build(fac, [0.2, 0.1], [0.05, 0.02], [0.1, 0.1], [0.03, 0.01])
    gamma, theta = precoder.effective_dl(ch, pset, 0, 0)
    e = precoder.mse_matrix(gamma, theta)
    w = precoder.mmse_receiver(gamma, theta)
    ident = np.eye(gamma.shape[1]) - w.conj().T @ gamma
    assert np.allclose(ident, e, atol=1e-10)


def test_forward_power_worked_example():
    # one stream, feeder SNR 3, gain power 2 -> radiated 2 * (3 + 1) = 8
    f = np.array([[np.sqrt(2.0)]], dtype=complex)
    h_in = np.array([[np.sqrt(3.0)]], dtype=complex)
    p_in = np.array([[1.0]], dtype=complex)
    assert precoder.sudas_forward_power(f, h_in, p_in) == pytest.approx(8.0)


def test_forward_power_matches_scalar_sum():
    rng = np.random.default_rng(5)
    for _ in range(20):
        cfg, ch = _draw(rng, m=4, n=4)
        eff = channel.effective_cnrs(ch, cfg)
        fac = channel.svd_factors(ch, 0, 0)
        n_s = 3
        p_bs = rng.uniform(0.01, 0.4, n_s)
        p_ue = rng.uniform(0.01, 0.4, n_s)
        g_dl = rng.uniform(0.001, 0.1, n_s)
        g_ul = rng.uniform(0.001, 0.1, n_s)
        pset = precoder.build(fac, p_bs, g_dl, p_ue, g_ul)
        g1 = eff.g_bs[0, :n_s]
        g2 = eff.g_sue[0, 0, :n_s]
        got_dl = precoder.sudas_forward_power(pset.f_dl, ch.h_bs[0], pset.p_dl)
        want_dl = float(np.sum(g_dl * (g1 * p_bs + 1.0)))
        assert got_dl == pytest.approx(want_dl, rel=1e-10)
        got_ul = precoder.sudas_forward_power(
            pset.f_ul, ch.h_sue[0, 0].conj().T, pset.p_ul)
        want_ul = float(np.sum(g_ul * (g2 * p_ue + 1.0)))
        assert got_ul == pytest.approx(want_ul, rel=1e-10)


def test_matched_construction_dominates_random_precoders():
    rng = np.random.default_rng(11)
    cfg, ch = _draw(rng, m=2, n=2)
    eff = channel.effective_cnrs(ch, cfg)
    fac = channel.svd_factors(ch, 0, 0)
    g1 = eff.g_bs[0]
    g2 = eff.g_sue[0, 0]
    b_tx, b_fwd = 0.5, 0.3

    def split_rate(t_tx, t_fwd):
        p1 = np.array([t_tx, 1.0 - t_tx]) * b_tx
        p2 = np.array([t_fwd, 1.0 - t_fwd]) * b_fwd
        return float(np.sum(model.rate_exact_dl(g1, g2, p1, p2)))

    # coordinate golden-section refinement over the two split fractions
    def golden(fun, lo, hi, iters=80):
        inv = (np.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        c, d = b - inv * (b - a), a + inv * (b - a)
        fc, fd = fun(c), fun(d)
        for _ in range(iters):
            if fc >= fd:
                b, d, fd = d, c, fc
                c = b - inv * (b - a)
                fc = fun(c)
            else:
                a, c, fc = c, d, fd
                d = a + inv * (b - a)
                fd = fun(d)
        return 0.5 * (a + b)

    t_tx, t_fwd = 0.5, 0.5
    for _ in range(6):
        t_tx = golden(lambda t: split_rate(t, t_fwd), 0.0, 1.0)
        t_fwd = golden(lambda t: split_rate(t_tx, t), 0.0, 1.0)
    best = split_rate(t_tx, t_fwd)

    h_feed = ch.h_bs[0]
    h_fwd = ch.h_sue[0, 0]
    for _ in range(1000):
        p = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        p *= np.sqrt(b_tx / np.real(np.trace(p @ p.conj().T)))
        f = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        inner = h_feed @ p
        cov = inner @ inner.conj().T + np.eye(2)
        f *= np.sqrt(b_fwd / np.real(np.trace(f @ cov @ f.conj().T)))
        stage = h_fwd @ f
        gamma = stage @ h_feed @ p
        theta = stage @ stage.conj().T + np.eye(2, dtype=complex)
        rate = -numerics.logdet_hpd(precoder.mse_matrix(gamma, theta))
        assert rate <= best * (1.0 + 1e-7) + 1e-9
