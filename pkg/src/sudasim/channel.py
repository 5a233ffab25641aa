"""Random channel realizations and effective per-stream channel-to-noise ratios.

Three link families per realization, all noise-normalized (identity noise
covariance absorbed into the gains):

- feeder links BS -> forwarding nodes: i.i.d. complex Gaussian entries with a
  log-distance mean CNR (licensed band),
- forward links forwarding node -> UE: diagonal per-node channels with Rician
  fading (unlicensed band, strong line of sight at short range),
- direct BS -> UE matrices with licensed statistics, used only by the
  single-hop reference systems.

Uplink channels follow by reciprocity (conjugate transpose), so uplink
effective CNRs equal their downlink counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from . import numerics
from .model import SystemConfig


@dataclass
class ChannelRealization:
    """Raw channel matrices for one Monte Carlo draw.

    h_bs: (n_subcarriers, n_sudacs, n_bs_antennas) feeder matrices.
    h_sue: (n_subcarriers, n_ues, n_sudacs, n_sudacs) diagonal forward
        matrices (one diagonal entry per forwarding node).
    h_direct: (n_subcarriers, n_ues, n_bs_antennas, n_bs_antennas) direct
        matrices for the reference systems.
    """

    h_bs: np.ndarray
    h_sue: np.ndarray
    h_direct: np.ndarray


@dataclass
class EffectiveChannels:
    """Per-stream CNRs after the channels are diagonalized.

    g_bs[i, n] pairs the n-th strongest feeder eigenchannel of subcarrier i
    with g_sue[i, k, n], the n-th strongest forward gain of UE k. Uplink
    arrays equal the downlink ones by reciprocity.
    """

    g_bs: np.ndarray
    g_sue: np.ndarray
    g_sb: np.ndarray
    g_ues: np.ndarray
    n_s: int


@dataclass
class SvdFactors:
    """Full thin SVDs of the two hop matrices for one (subcarrier, ue)."""

    u_bs: np.ndarray
    s_bs: np.ndarray
    v_bs: np.ndarray
    u_sue: np.ndarray
    s_sue: np.ndarray
    v_sue: np.ndarray


# =========================================================================
# generation
# =========================================================================

def _cscg(rng, shape, rho):
    """Unit-variance circularly symmetric Gaussian, AR(1) along axis 0."""
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    if rho > 0.0:
        out = np.empty_like(z)
        out[0] = z[0]
        mix = np.sqrt(1.0 - rho * rho)
        for i in range(1, shape[0]):
            out[i] = rho * out[i - 1] + mix * z[i]
        return out
    return z


def generate(cfg: SystemConfig, rng):
    """Draw one channel realization.

    Parameters
    ----------
    cfg : SystemConfig
    rng : numpy Generator (draw order: feeder, forward scatter, direct).

    Returns
    -------
    ChannelRealization with the shapes documented on the type. With fading
    disabled every entry magnitude equals the deterministic path gain.
    """
    knobs = cfg.channel
    rho = float(knobs.subcarrier_correlation)
    if not 0.0 <= rho < 1.0:
        raise ValueError("subcarrier_correlation must be in [0, 1)")
    n_f, m, n, k = cfg.n_subcarriers, cfg.n_sudacs, cfg.n_bs_antennas, cfg.n_ues
    amp1 = np.sqrt(knobs.licensed_mean_cnr())
    amp2 = np.sqrt(knobs.unlicensed_mean_cnr())

    if knobs.fading:
        h_bs = amp1 * _cscg(rng, (n_f, m, n), rho)
        kappa = 10.0 ** (knobs.rician_k_db / 10.0)
        los = np.sqrt(kappa / (kappa + 1.0))
        scatter = np.sqrt(1.0 / (kappa + 1.0))
        diag = amp2 * (los + scatter * _cscg(rng, (n_f, k, m), rho))
        h_direct = amp1 * _cscg(rng, (n_f, k, n, n), rho)
    else:
        h_bs = amp1 * np.ones((n_f, m, n), dtype=np.complex128)
        diag = amp2 * np.ones((n_f, k, m), dtype=np.complex128)
        h_direct = amp1 * np.ones((n_f, k, n, n), dtype=np.complex128)

    h_sue = np.zeros((n_f, k, m, m), dtype=np.complex128)
    idx = np.arange(m)
    h_sue[:, :, idx, idx] = diag
    return ChannelRealization(h_bs=h_bs, h_sue=h_sue, h_direct=h_direct)


# =========================================================================
# effective channels
# =========================================================================

def effective_cnrs(ch: ChannelRealization, cfg: SystemConfig):
    """Reduce a realization to per-stream CNRs.

    The stream count is min(antennas, forwarding nodes, configured cap,
    observed numerical ranks); the n-th stream pairs the n-th largest feeder
    singular value with the n-th largest forward gain.
    """
    _, sigma, _ = numerics.svd_batch(ch.h_bs)
    g_bs_full = sigma ** 2
    rank_bs = int(np.min(np.sum(sigma > 0.0, axis=1)))

    d = np.diagonal(ch.h_sue, axis1=2, axis2=3)
    mags = np.abs(d) ** 2
    mags = -np.sort(-mags, axis=2, kind="stable")
    dmax = np.max(mags, axis=2, keepdims=True)
    alive = mags > (numerics.RANK_TOL ** 2) * dmax
    rank_sue = int(np.min(np.sum(alive, axis=2)))

    n_s = min(cfg.n_streams(), rank_bs, rank_sue)
    if n_s < 1:
        raise ValueError("channel realization has no usable stream")
    g_bs = np.ascontiguousarray(g_bs_full[:, :n_s])
    g_sue = np.ascontiguousarray(mags[:, :, :n_s])
    return EffectiveChannels(
        g_bs=g_bs, g_sue=g_sue, g_sb=g_bs.copy(), g_ues=g_sue.copy(), n_s=n_s)


def svd_factors(ch: ChannelRealization, subcarrier: int, ue: int):
    """Thin SVDs of both hop matrices for one (subcarrier, ue) pair.

    The feeder factor comes from the Jacobi SVD; the diagonal forward matrix
    is factored analytically (permutation times phase), which is an exact
    SVD with descending singular values.
    """
    u_bs, s_bs, v_bs = numerics.svd(ch.h_bs[subcarrier])
    d = np.diagonal(ch.h_sue[subcarrier, ue])
    m = d.shape[0]
    mags = np.abs(d)
    order = np.argsort(-mags, kind="stable")
    s_sue = mags[order]
    v_sue = np.zeros((m, m), dtype=np.complex128)
    u_sue = np.zeros((m, m), dtype=np.complex128)
    for j, src in enumerate(order):
        v_sue[src, j] = 1.0
        phase = d[src] / mags[src] if mags[src] > 0 else 1.0
        u_sue[src, j] = phase
    return SvdFactors(u_bs=u_bs, s_bs=s_bs, v_bs=v_bs,
                      u_sue=u_sue, s_sue=s_sue, v_sue=v_sue)
