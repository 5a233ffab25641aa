"""SVD-matched precoders and MMSE receive processing.

The construction pairs the strongest feeder eigenchannel with the strongest
forward gain per stream: the BS precoder and the forwarding matrices are
built from the hop SVD factors so that the end-to-end cascade, the noise
covariance, and hence the MSE matrix are simultaneously diagonalized. With
that structure the matrix mutual information collapses to the scalar
per-stream rate formulas in :mod:`sudasim.model`.

Power conventions: ``p_bs`` / ``p_ue`` are radiated transmit powers per
stream. ``g_fwd_dl`` / ``g_fwd_ul`` are forward *gain* powers (the squared
amplification the forwarding stage applies); the corresponding radiated
forward power is ``g * (1 + cnr_in * p_in)`` per stream, which is what
:func:`sudas_forward_power` measures and what the budget constraints cap.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from . import numerics
from .channel import ChannelRealization, SvdFactors


@dataclass
class PrecoderSet:
    """Transmit/forward matrices plus the scalar powers they carry.

    p_dl: (n_bs_antennas, n_s) BS transmit precoder.
    f_dl: (n_sudacs, n_sudacs) downlink forwarding matrix.
    p_ul: (n_sudacs, n_s) UE-side uplink precoder.
    f_ul: (n_sudacs, n_sudacs) uplink forwarding matrix.
    """

    p_dl: np.ndarray
    f_dl: np.ndarray
    p_ul: np.ndarray
    f_ul: np.ndarray
    p_bs: np.ndarray
    g_fwd_dl: np.ndarray
    p_ue: np.ndarray
    g_fwd_ul: np.ndarray


def _power_vec(p, n_s, name):
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape[0] != n_s:
        raise ValueError(f"{name} must have one entry per stream")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be nonnegative and finite")
    return arr


def build(factors: SvdFactors, p_bs, g_fwd_dl, p_ue, g_fwd_ul):
    """Assemble the matched precoder set for one (subcarrier, ue).

    Parameters
    ----------
    factors : SvdFactors
        Thin SVDs of the feeder and forward hop matrices.
    p_bs, g_fwd_dl, p_ue, g_fwd_ul : array_like, shape (n_s,)
        Per-stream scalar powers (see module docstring for conventions).

    Raises
    ------
    ValueError
        If either hop's numerical rank cannot support n_s streams.
    """
    p_bs = np.asarray(p_bs, dtype=float).reshape(-1)
    n_s = p_bs.shape[0]
    p_bs = _power_vec(p_bs, n_s, "p_bs")
    g_dl = _power_vec(g_fwd_dl, n_s, "g_fwd_dl")
    p_ue = _power_vec(p_ue, n_s, "p_ue")
    g_ul = _power_vec(g_fwd_ul, n_s, "g_fwd_ul")
    if n_s < 1:
        raise ValueError("at least one stream is required")
    if np.sum(factors.s_bs > 0) < n_s:
        raise ValueError(
            f"feeder hop rank {int(np.sum(factors.s_bs > 0))} cannot carry {n_s} streams")
    if np.sum(factors.s_sue > 0) < n_s:
        raise ValueError(
            f"forward hop rank {int(np.sum(factors.s_sue > 0))} cannot carry {n_s} streams")

    v_bs = factors.v_bs[:, :n_s]
    u_bs = factors.u_bs[:, :n_s]
    v_sue = factors.v_sue[:, :n_s]
    u_sue = factors.u_sue[:, :n_s]
    p_dl = v_bs * np.sqrt(p_bs)[None, :]
    f_dl = (v_sue * np.sqrt(g_dl)[None, :]) @ u_bs.conj().T
    p_ul = u_sue * np.sqrt(p_ue)[None, :]
    f_ul = (u_bs * np.sqrt(g_ul)[None, :]) @ v_sue.conj().T
    return PrecoderSet(p_dl=p_dl, f_dl=f_dl, p_ul=p_ul, f_ul=f_ul,
                       p_bs=p_bs, g_fwd_dl=g_dl, p_ue=p_ue, g_fwd_ul=g_ul)


# =========================================================================
# MMSE processing
# =========================================================================

def mse_matrix(gamma, theta):
    """MSE matrix E = (I + Gamma^H Theta^{-1} Gamma)^{-1}.

    gamma is the effective end-to-end cascade (rx_dim, n_s); theta the
    Hermitian positive definite noise-plus-forwarded-noise covariance.
    The achievable sum rate of the link is -log2 det(E).
    """
    gamma = np.asarray(gamma, dtype=np.complex128)
    n_s = gamma.shape[1]
    x = numerics.solve_hpd(theta, gamma)
    s = np.eye(n_s, dtype=np.complex128) + gamma.conj().T @ x
    return numerics.inv_hpd(s)


def mmse_receiver(gamma, theta):
    """Linear MMSE receive filter W = (Gamma Gamma^H + Theta)^{-1} Gamma."""
    gamma = np.asarray(gamma, dtype=np.complex128)
    cov = gamma @ gamma.conj().T + np.asarray(theta, dtype=np.complex128)
    return numerics.solve_hpd(cov, gamma)


def sudas_forward_power(f, h_in, p_in):
    """Radiated power of a forwarding stage: Tr(F (H P P^H H^H + I) F^H).

    With the matched construction this equals
    sum_n g_n * (cnr_in_n * p_in_n + 1).
    """
    f = np.asarray(f, dtype=np.complex128)
    h_in = np.asarray(h_in, dtype=np.complex128)
    p_in = np.asarray(p_in, dtype=np.complex128)
    inner = h_in @ p_in
    cov = inner @ inner.conj().T + np.eye(f.shape[1], dtype=np.complex128)
    return float(np.real(np.trace(f @ cov @ f.conj().T)))


# =========================================================================
# effective links for one (subcarrier, ue)
# =========================================================================

def effective_dl(ch: ChannelRealization, pset: PrecoderSet, subcarrier: int, ue: int):
    """Downlink cascade and noise covariance seen by the UE.

    gamma = H_fwd F_dl H_feed P_dl; theta = (H_fwd F_dl)(H_fwd F_dl)^H + I.
    """
    h_feed = ch.h_bs[subcarrier]
    h_fwd = ch.h_sue[subcarrier, ue]
    stage = h_fwd @ pset.f_dl
    gamma = stage @ h_feed @ pset.p_dl
    theta = stage @ stage.conj().T + np.eye(stage.shape[0], dtype=np.complex128)
    return gamma, theta


def effective_ul(ch: ChannelRealization, pset: PrecoderSet, subcarrier: int, ue: int):
    """Uplink cascade and noise covariance seen by the BS.

    Uplink channels follow by reciprocity; the forwarded-noise covariance is
    built from the forwarding-to-BS hop, mirroring the downlink structure.
    """
    h_ues = ch.h_sue[subcarrier, ue].conj().T
    h_sb = ch.h_bs[subcarrier].conj().T
    stage = h_sb @ pset.f_ul
    gamma = stage @ h_ues @ pset.p_ul
    theta = stage @ stage.conj().T + np.eye(stage.shape[0], dtype=np.complex128)
    return gamma, theta
