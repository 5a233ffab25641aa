"""System model: configuration, allocation policies, rates, power, feasibility.

Conventions used across the package:

- Scalar per-stream powers are *radiated* powers in watt. For forwarded
  streams this is the power leaving the forwarding node, which already
  includes the amplified carrier and noise; the two-hop SINR formulas below
  are exact under this convention.
- Policies store energy shares ``e = p * s`` (transmit power weighted by the
  time-sharing factor of the carrying subcarrier), so power budgets and the
  consumption model are linear in the stored quantities.
- The solver works with unit subcarrier bandwidth internally; everything
  reported here is scaled by ``subcarrier_bandwidth_hz`` (rates in bit/s,
  energy efficiency in bit/joule).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

LN2 = float(np.log(2.0))


# =========================================================================
# configuration
# =========================================================================

@dataclass
class ChannelKnobs:
    """Statistical channel model parameters.

    Mean CNRs are per matrix entry (licensed) / per diagonal entry
    (unlicensed) at the reference distance; a log-distance law rescales them
    when the actual distance differs.
    """

    licensed_cnr_db: float = 31.0
    unlicensed_cnr_db: float = 65.0
    licensed_ref_distance_m: float = 100.0
    unlicensed_ref_distance_m: float = 4.0
    licensed_distance_m: float = 100.0
    unlicensed_distance_m: float = 4.0
    licensed_pathloss_exp: float = 3.5
    unlicensed_pathloss_exp: float = 2.0
    rician_k_db: float = 6.0
    fading: bool = True
    subcarrier_correlation: float = 0.0

    def licensed_mean_cnr(self):
        ratio = self.licensed_distance_m / self.licensed_ref_distance_m
        return 10.0 ** (self.licensed_cnr_db / 10.0) * ratio ** (-self.licensed_pathloss_exp)

    def unlicensed_mean_cnr(self):
        ratio = self.unlicensed_distance_m / self.unlicensed_ref_distance_m
        return 10.0 ** (self.unlicensed_cnr_db / 10.0) * ratio ** (-self.unlicensed_pathloss_exp)


@dataclass
class SystemConfig:
    """Full description of one system instance.

    Power budgets: ``p_bs_max_w`` caps the summed downlink base-station
    energy shares, ``p_sudas_dl_total_w`` the summed downlink forward energy
    over all forwarding nodes, ``p_ue_max_w`` each UE's uplink energy, and
    ``p_sudas_ul_total_w`` the summed uplink forward energy. Rate floors are
    per UE and direction; a zero entry means the UE is not delay sensitive.
    """

    n_bs_antennas: int = 8
    n_sudacs: int = 8
    n_ues: int = 4
    n_subcarriers: int = 1200
    n_streams_cap: int | None = None
    subcarrier_bandwidth_hz: float = 15e3
    p_bs_max_w: float = 10.0 ** (46.0 / 10.0) / 1000.0
    p_sudas_dl_total_w: float = 10.0 ** (23.0 / 10.0) / 1000.0
    p_ue_max_w: float = 10.0 ** (23.0 / 10.0) / 1000.0
    p_sudas_ul_total_w: float = 10.0 ** (23.0 / 10.0) / 1000.0
    r_min_dl_bps: tuple = ()
    r_min_ul_bps: tuple = ()
    p_circuit_bs_w: float = 15.0
    p_per_antenna_bs_w: float = 0.975
    p_circuit_sudac_w: float = 0.1
    p_circuit_ue_w: float = 1.0
    amp_slope_bs: float = 4.0
    amp_slope_sudas: float = 4.0
    amp_slope_ue: float = 4.0
    channel: ChannelKnobs = field(default_factory=ChannelKnobs)

    def __post_init__(self):
        for name in ("n_bs_antennas", "n_sudacs", "n_ues", "n_subcarriers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("subcarrier_bandwidth_hz", "p_bs_max_w", "p_sudas_dl_total_w",
                     "p_ue_max_w", "p_sudas_ul_total_w"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("amp_slope_bs", "amp_slope_sudas", "amp_slope_ue"):
            if getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be >= 1 (inverse amplifier efficiency)")
        if self.n_streams_cap is not None and self.n_streams_cap < 1:
            raise ValueError("n_streams_cap must be >= 1 when given")
        self.r_min_dl_bps = _floor_tuple(self.r_min_dl_bps, self.n_ues, "r_min_dl_bps")
        self.r_min_ul_bps = _floor_tuple(self.r_min_ul_bps, self.n_ues, "r_min_ul_bps")

    # ---- derived quantities -------------------------------------------

    def n_streams(self):
        cap = self.n_streams_cap if self.n_streams_cap is not None else 10 ** 9
        return int(min(self.n_bs_antennas, self.n_sudacs, cap))

    def static_power_w(self):
        return (self.p_circuit_bs_w
                + self.n_bs_antennas * self.p_per_antenna_bs_w
                + self.n_sudacs * self.p_circuit_sudac_w
                + self.n_ues * self.p_circuit_ue_w)

    def delay_sensitive_dl(self):
        return np.array([k for k, r in enumerate(self.r_min_dl_bps) if r > 0.0], dtype=int)

    def delay_sensitive_ul(self):
        return np.array([k for k, r in enumerate(self.r_min_ul_bps) if r > 0.0], dtype=int)


def _floor_tuple(values, k, name):
    arr = tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float))) if len(
        np.atleast_1d(values)) else tuple(0.0 for _ in range(k))
    if len(arr) != k:
        raise ValueError(f"{name} must have one entry per UE")
    if any(v < 0 for v in arr):
        raise ValueError(f"{name} entries must be nonnegative")
    return arr


def reference_config(**overrides):
    """The evaluation setup used throughout: 8 BS antennas, 8 forwarding
    nodes, 4 UEs, one delay-sensitive UE per direction at 20 Mbit/s."""
    base = dict(
        r_min_dl_bps=(20e6, 0.0, 0.0, 0.0),
        r_min_ul_bps=(20e6, 0.0, 0.0, 0.0),
    )
    base.update(overrides)
    return SystemConfig(**base)


def desk_config(**overrides):
    """Reference setup shrunk to 64 subcarriers with floors scaled by the
    same factor, for tests and quick experiments."""
    scale = 64.0 / 1200.0
    base = dict(
        n_subcarriers=64,
        r_min_dl_bps=(20e6 * scale, 0.0, 0.0, 0.0),
        r_min_ul_bps=(20e6 * scale, 0.0, 0.0, 0.0),
    )
    base.update(overrides)
    return SystemConfig(**base)


# =========================================================================
# policies and reports
# =========================================================================

@dataclass
class AllocationPolicy:
    """One complete resource allocation.

    Arrays are indexed (subcarrier, ue, stream) for energy shares and
    (subcarrier, ue) for the time-sharing selectors; ``alpha``/``beta`` are
    the downlink/uplink time fractions.
    """

    e_bs: np.ndarray
    e_sue: np.ndarray
    e_ues: np.ndarray
    e_sb: np.ndarray
    s_dl: np.ndarray
    s_ul: np.ndarray
    alpha: float
    beta: float

    @staticmethod
    def zeros(cfg, n_s=None):
        n_s = cfg.n_streams() if n_s is None else int(n_s)
        shape = (cfg.n_subcarriers, cfg.n_ues, n_s)
        z = lambda: np.zeros(shape)
        sel = lambda: np.zeros((cfg.n_subcarriers, cfg.n_ues))
        return AllocationPolicy(z(), z(), z(), z(), sel(), sel(), 0.5, 0.5)


@dataclass
class SolveReport:
    """Outcome of one solver run (reported units: bit/s, watt, bit/joule)."""

    eta_trajectory: list
    final_policy: AllocationPolicy
    throughput: float
    power: float
    ee: float
    constraint_residuals: dict
    iterations_used: int
    ee_curve: list
    final_gap: float
    rate_mode: str


# =========================================================================
# per-stream rates
# =========================================================================

def _validate_rate_args(g1, g2, p1, p2):
    g1, g2, p1, p2 = (np.asarray(x, dtype=float) for x in (g1, g2, p1, p2))
    for name, arr in (("g1", g1), ("g2", g2), ("p1", p1), ("p2", p2)):
        if np.any(arr < 0):
            raise ValueError(f"{name} must be nonnegative")
    return g1, g2, p1, p2


def sinr_exact(g1, g2, p1, p2):
    """Two-hop amplify-and-forward SINR with radiated hop powers."""
    g1, g2, p1, p2 = _validate_rate_args(g1, g2, p1, p2)
    a = g1 * p1
    b = g2 * p2
    return a * b / (1.0 + a + b)


def sinr_approx(g1, g2, p1, p2):
    """Interference-limited (high SNR) form: harmonic combination of the
    two hop SNRs; zero when both hops carry zero power."""
    g1, g2, p1, p2 = _validate_rate_args(g1, g2, p1, p2)
    a = g1 * p1
    b = g2 * p2
    den = a + b
    return np.where(den > 0.0, a * b / np.where(den > 0.0, den, 1.0), 0.0)


def rate_exact_dl(g_bs, g_sue, p_bs, p_sue):
    """Per-stream downlink rate log2(1 + exact SINR), bit/s/Hz.

    Parameters
    ----------
    g_bs, g_sue : CNRs of the feeder and forward hops (1/W).
    p_bs, p_sue : radiated powers of the feeder and forward hops (W).
    """
    return np.log2(1.0 + sinr_exact(g_bs, g_sue, p_bs, p_sue))


def rate_approx_dl(g_bs, g_sue, p_bs, p_sue):
    """Per-stream downlink rate under the high-SNR SINR form, bit/s/Hz."""
    return np.log2(1.0 + sinr_approx(g_bs, g_sue, p_bs, p_sue))


def rate_exact_ul(g_ues, g_sb, p_ues, p_sb):
    """Uplink twin of rate_exact_dl (UE hop first, forward hop second)."""
    return np.log2(1.0 + sinr_exact(g_ues, g_sb, p_ues, p_sb))


def rate_approx_ul(g_ues, g_sb, p_ues, p_sb):
    """Uplink twin of rate_approx_dl."""
    return np.log2(1.0 + sinr_approx(g_ues, g_sb, p_ues, p_sb))


_RATE_DL = {"exact": rate_exact_dl, "approx": rate_approx_dl}
_RATE_UL = {"exact": rate_exact_ul, "approx": rate_approx_ul}


def _check_mode(mode):
    if mode not in ("exact", "approx"):
        raise ValueError("mode must be 'exact' or 'approx'")


# =========================================================================
# policy evaluation
# =========================================================================

def _powers_from_energy(e, s):
    # e = p * s with the convention 0/0 -> 0
    mask = s > 0.0
    safe = np.where(mask, s, 1.0)[:, :, None]
    return np.where(mask[:, :, None], e / safe, 0.0)


def per_ue_rates(policy, eff, cfg, mode="exact"):
    """Time-shared per-UE rates in bit/s, returned as (dl, ul) arrays."""
    _check_mode(mode)
    b = cfg.subcarrier_bandwidth_hz
    p_bs = _powers_from_energy(policy.e_bs, policy.s_dl)
    p_sue = _powers_from_energy(policy.e_sue, policy.s_dl)
    r_dl = _RATE_DL[mode](eff.g_bs[:, None, :], eff.g_sue, p_bs, p_sue)
    dl = b * np.sum(policy.s_dl * np.sum(r_dl, axis=2), axis=0)
    p_ues = _powers_from_energy(policy.e_ues, policy.s_ul)
    p_sb = _powers_from_energy(policy.e_sb, policy.s_ul)
    r_ul = _RATE_UL[mode](eff.g_ues, eff.g_sb[:, None, :], p_ues, p_sb)
    ul = b * np.sum(policy.s_ul * np.sum(r_ul, axis=2), axis=0)
    return dl, ul


def throughput(policy, eff, cfg, mode="exact"):
    """End-to-end weighted system throughput in bit/s."""
    dl, ul = per_ue_rates(policy, eff, cfg, mode)
    return float(np.sum(dl) + np.sum(ul))


def power_consumption(policy, cfg):
    """Total consumed power in watt: circuit terms plus amplifier slopes
    applied to the time-weighted transmit energies."""
    dyn = (cfg.amp_slope_bs * float(np.sum(policy.e_bs))
           + cfg.amp_slope_sudas * float(np.sum(policy.e_sue) + np.sum(policy.e_sb))
           + cfg.amp_slope_ue * float(np.sum(policy.e_ues)))
    return cfg.static_power_w() + dyn


def energy_efficiency(policy, eff, cfg, mode="exact"):
    """Throughput per consumed power, bit/joule."""
    return throughput(policy, eff, cfg, mode) / power_consumption(policy, cfg)


def feasibility(policy, eff, cfg, mode="exact"):
    """Signed residuals for every constraint; <= 0 means satisfied.

    Per-UE constraint families are reported as their worst member. Rate
    floor residuals are in bit/s, power residuals in watt.
    """
    _check_mode(mode)
    dl, ul = per_ue_rates(policy, eff, cfg, mode)
    r_dl = np.asarray(cfg.r_min_dl_bps)
    r_ul = np.asarray(cfg.r_min_ul_bps)
    per_ue_ul_energy = np.sum(policy.e_ues, axis=(0, 2))
    res = {
        "C1": float(np.sum(policy.e_bs) - cfg.p_bs_max_w),
        "C2": float(np.sum(policy.e_sue) - cfg.p_sudas_dl_total_w),
        "C3": float(np.max(per_ue_ul_energy) - cfg.p_ue_max_w),
        "C4": float(np.sum(policy.e_sb) - cfg.p_sudas_ul_total_w),
        "C5": float(np.max(r_dl - dl)) if np.any(r_dl > 0) else 0.0,
        "C6": float(np.max(r_ul - ul)) if np.any(r_ul > 0) else 0.0,
        "C7": float(np.max(np.sum(policy.s_dl, axis=1) - policy.alpha)),
        "C8": float(np.max(np.sum(policy.s_ul, axis=1) - policy.beta)),
        "C9": float(max(np.max(policy.s_dl - policy.alpha), np.max(-policy.s_dl))),
        "C10": float(max(np.max(policy.s_ul - policy.beta), np.max(-policy.s_ul))),
        "C11": float(policy.alpha + policy.beta - 1.0),
        "C12": float(max(-policy.alpha, -policy.beta)),
    }
    # floors for non-delay-sensitive UEs never bind
    if np.any(r_dl > 0):
        res["C5"] = float(np.max((r_dl - dl)[r_dl > 0]))
    if np.any(r_ul > 0):
        res["C6"] = float(np.max((r_ul - ul)[r_ul > 0]))
    return res
