"""Radio and compute cost models: UMa path loss, SNR, upload and CPU time/energy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
NOISE_DENSITY_DBM_HZ = -174.0
H_BS = 25.0
H_UT = 1.5
SHADOW_SIGMA_LOS_DB = 4.0
SHADOW_SIGMA_NLOS_DB = 6.0


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


NOISE_DENSITY_W_HZ = dbm_to_watt(NOISE_DENSITY_DBM_HZ)


def _check_distance(distance_m: float) -> None:
    if not 10.0 <= distance_m <= 5000.0:
        raise ValueError(f"UMa model valid for 10 m <= d <= 5000 m, got {distance_m}")


def breakpoint_distance(carrier_ghz: float, h_bs: float = H_BS, h_ut: float = H_UT) -> float:
    # effective environment height is 1 m for h_UT < 13 m
    return 4.0 * (h_bs - 1.0) * (h_ut - 1.0) * carrier_ghz * 1e9 / SPEED_OF_LIGHT


def pathloss_los_db(distance_m: float, carrier_ghz: float,
                    h_bs: float = H_BS, h_ut: float = H_UT) -> float:
    _check_distance(distance_m)
    d3d = math.hypot(distance_m, h_bs - h_ut)
    d_bp = breakpoint_distance(carrier_ghz, h_bs, h_ut)
    if distance_m <= d_bp:
        return 28.0 + 22.0 * math.log10(d3d) + 20.0 * math.log10(carrier_ghz)
    return (28.0 + 40.0 * math.log10(d3d) + 20.0 * math.log10(carrier_ghz)
            - 9.0 * math.log10(d_bp ** 2 + (h_bs - h_ut) ** 2))


def pathloss_db(distance_m: float, carrier_ghz: float, los: bool,
                h_bs: float = H_BS, h_ut: float = H_UT) -> float:
    """3GPP TR 38.901 UMa path loss in dB; ``distance_m`` is the 2-D distance."""
    pl_los = pathloss_los_db(distance_m, carrier_ghz, h_bs, h_ut)
    if los:
        return pl_los
    d3d = math.hypot(distance_m, h_bs - h_ut)
    pl_nlos = (13.54 + 39.08 * math.log10(d3d) + 20.0 * math.log10(carrier_ghz)
               - 0.6 * (h_ut - 1.5))
    return max(pl_los, pl_nlos)


def los_probability(distance_m: float, h_ut: float = H_UT) -> float:
    if distance_m <= 18.0:
        return 1.0
    c_prime = 0.0 if h_ut <= 13.0 else ((h_ut - 13.0) / 10.0) ** 1.5
    base = 18.0 / distance_m + math.exp(-distance_m / 63.0) * (1.0 - 18.0 / distance_m)
    return base * (1.0 + c_prime * 1.25 * (distance_m / 100.0) ** 3
                   * math.exp(-distance_m / 150.0))


@dataclass(frozen=True)
class LinkState:
    distance_m: float
    pathloss_lin: float
    shadowing_lin: float
    p_tx: float
    prb_size: float
    noise_density: float = NOISE_DENSITY_W_HZ
    los: bool = True

    def __post_init__(self):
        for name in ("pathloss_lin", "shadowing_lin", "p_tx", "prb_size", "noise_density"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def snr(self) -> float:
        return snr(self)


def snr(link: LinkState) -> float:
    return link.pathloss_lin * link.shadowing_lin * link.p_tx / (link.prb_size * link.noise_density)


def sample_link(distance_m: float, carrier_ghz: float, p_tx: float, prb_size: float,
                rng: np.random.Generator) -> LinkState:
    """Draw LOS state and log-normal shadowing for one edge round."""
    los = bool(rng.random() < los_probability(distance_m))
    sigma = SHADOW_SIGMA_LOS_DB if los else SHADOW_SIGMA_NLOS_DB
    shadow_db = sigma * rng.standard_normal()
    pl = pathloss_db(distance_m, carrier_ghz, los)
    return LinkState(
        distance_m=distance_m,
        pathloss_lin=db_to_linear(-pl),
        shadowing_lin=db_to_linear(shadow_db),
        p_tx=p_tx,
        prb_size=prb_size,
        los=los,
    )


def payload_bits(num_params: int, fpp: int = 32) -> int:
    return int(num_params) * (int(fpp) + 1)


def upload_time(payload: float, prb_size: float, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError(f"SNR must be positive, got {gamma}")
    if payload <= 0:
        raise ValueError(f"payload must be positive, got {payload}")
    return payload / (prb_size * math.log2(1.0 + gamma))


def upload_energy(payload: float, prb_size: float, gamma: float, p_tx: float) -> float:
    return p_tx * upload_time(payload, prb_size, gamma)


@dataclass(frozen=True)
class ComputeProfile:
    cycles_per_bit: float
    sample_bits: float
    minibatches: int
    batch_size: int
    f_max: float
    zeta_cap: float
    energy_budget: float
    deadline: float

    def __post_init__(self):
        for name in ("cycles_per_bit", "sample_bits", "minibatches", "batch_size",
                     "f_max", "zeta_cap", "energy_budget", "deadline"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def cycles_per_round(self) -> float:
        """CPU cycles of one local round: n * n_bar * c_u * D_u."""
        return self.minibatches * self.batch_size * self.cycles_per_bit * self.sample_bits


def _check_compute(rounds: float, profile: ComputeProfile, f: float) -> None:
    if rounds < 1:
        raise ValueError(f"local rounds must be >= 1, got {rounds}")
    if not 0 < f <= profile.f_max:
        raise ValueError(f"CPU frequency {f} outside (0, f_max={profile.f_max}]")


def compute_time(rounds: float, profile: ComputeProfile, f: float) -> float:
    _check_compute(rounds, profile, f)
    return rounds * profile.cycles_per_round / f


def compute_energy(rounds: float, profile: ComputeProfile, f: float) -> float:
    _check_compute(rounds, profile, f)
    return rounds * 0.5 * profile.zeta_cap * profile.cycles_per_round * f ** 2


def success_indicator(t_cp: float, t_up: float, t_th: float) -> int:
    return int(t_cp + t_up <= t_th)
