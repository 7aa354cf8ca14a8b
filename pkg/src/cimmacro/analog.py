"""Bit-line physics primitives and their noise models.

All arithmetic is carried in the normalised discharge quantum
``u = i0 * tau / c_bl``: one branch conducting for one DTC quantum drops the
line by ``u`` volts (ideal, lambda_clm = 0).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import HeadroomExceeded, OutOfRange, ValidationError


@dataclass(frozen=True)
class AnalogParams:
    vdd: float = 1.1
    vpp_mac: float = 0.5
    c_bl: float = 150e-15
    i0: float = 1.2e-6
    tau: float = 2e-12
    lambda_clm: float = 0.0
    boost: int = 1

    def __post_init__(self):
        for name in ("vdd", "vpp_mac", "c_bl", "i0", "tau"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"analog.{name} must be > 0")
        if self.lambda_clm < 0:
            raise ValidationError("analog.lambda_clm must be >= 0")
        if self.boost not in (1, 2):
            raise ValidationError("analog.boost must be in {1, 2}")
        if self.vpp_mac > self.vdd:
            raise ValidationError("analog.vpp_mac must not exceed vdd")

    @property
    def u(self) -> float:
        """Discharge quantum in volts."""
        return self.i0 * self.tau / self.c_bl

    @property
    def v_min(self) -> float:
        return self.vdd - self.vpp_mac

    def with_boost(self, boost: int) -> "AnalogParams":
        return replace(self, boost=boost)


@dataclass(frozen=True)
class NoiseParams:
    sigma_edge: float = 0.0
    k_narrow: float = 0.0
    w_floor: float = 0.0
    sigma_branch: float = 0.0
    sigma_sa: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_edge", "k_narrow", "w_floor", "sigma_branch", "sigma_sa"):
            if getattr(self, name) < 0:
                raise ValidationError(f"noise.{name} must be >= 0")
        if self.k_narrow > 0 and self.w_floor == 0:
            # sigma_t(w) diverges at w -> 0 without a floor
            raise ValidationError("noise.w_floor must be > 0 when k_narrow > 0")

    @property
    def ideal(self) -> bool:
        return not (self.sigma_edge or self.k_narrow or self.sigma_branch or self.sigma_sa)

    @property
    def pulse_noise(self) -> bool:
        return bool(self.sigma_edge or self.k_narrow)


IDEAL_NOISE = NoiseParams()


@dataclass
class BitlinePair:
    v_rbl: float = 0.0
    v_rblb: float = 0.0
    precharged: bool = False


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream...)``; used to split work deterministically."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def precharge(bl: BitlinePair, p: AnalogParams) -> BitlinePair:
    return BitlinePair(p.vdd, p.vdd, True)


def pulse_sigma(width, n: NoiseParams):
    """Std of the pulse-width error for a pulse of nominal ``width`` seconds."""
    width = np.asarray(width, dtype=float)
    if n.k_narrow == 0:
        return np.full_like(width, n.sigma_edge)
    return n.sigma_edge + n.k_narrow / (width + n.w_floor)


def noisy_widths(nominal, n: NoiseParams, rng: np.random.Generator | None):
    """Apply pulse-width noise to an array of nominal widths (seconds).

    Zero-width entries fire no pulse and stay exactly zero.
    """
    nominal = np.asarray(nominal, dtype=float)
    if not n.pulse_noise or rng is None:
        return nominal.copy()
    eps = rng.standard_normal(nominal.shape) * pulse_sigma(nominal, n)
    out = np.maximum(nominal + eps, 0.0)
    return np.where(nominal > 0, out, 0.0)


def dtc_pulse(magnitude: int, p: AnalogParams, n: NoiseParams = IDEAL_NOISE,
              rng: np.random.Generator | None = None) -> float:
    if magnitude < 0:
        raise OutOfRange("pulse magnitude must be >= 0")
    nominal = magnitude * p.boost * p.tau
    if magnitude == 0:
        return 0.0
    return float(noisy_widths(np.array([nominal]), n, rng)[0])


def discharge_volts(v0, drop, p: AnalogParams):
    """Line voltage after removing charge equivalent to ``drop`` volts (= I*t/C).

    With channel-length modulation the branch current scales with (1 + lambda*V),
    giving V = (v0 + 1/lambda) * exp(-lambda * drop) - 1/lambda.
    """
    v0 = np.asarray(v0, dtype=float)
    drop = np.asarray(drop, dtype=float)
    lam = p.lambda_clm
    if lam == 0:
        v = v0 - drop
    else:
        v = (v0 + 1.0 / lam) * np.exp(-lam * drop) - 1.0 / lam
    return np.maximum(v, 0.0)


def check_headroom(v, p: AnalogParams):
    v = np.asarray(v)
    # small slack for float rounding on exact-boundary designs
    if np.any(v < p.v_min - 1e-12):
        raise HeadroomExceeded(
            f"bit-line fell to {float(np.min(v)):.4f} V, below vdd - vpp_mac = {p.v_min:.4f} V"
        )


def discharge(v0: float, n_branches: int, width: float, branch_factors, p: AnalogParams) -> float:
    """Discharge one line through ``n_branches`` parallel cells for ``width`` seconds."""
    if not 0 <= n_branches <= 64:
        raise OutOfRange("n_branches must be within [0, 64]")
    if width < 0:
        raise OutOfRange("width must be >= 0")
    factors = np.asarray(branch_factors, dtype=float)
    if len(factors) < n_branches:
        raise OutOfRange("branch_factors shorter than n_branches")
    i_eff = p.i0 * float(np.sum(1.0 + factors[:n_branches]))
    v = float(discharge_volts(v0, i_eff * width / p.c_bl, p))
    check_headroom(v, p)
    return v


def sample_mismatch(count: int, n: NoiseParams, rng: np.random.Generator) -> np.ndarray:
    if count < 0:
        raise OutOfRange("count must be >= 0")
    # always draw so the stream stays aligned when sigma_branch is swept through 0
    return rng.standard_normal(count) * n.sigma_branch
