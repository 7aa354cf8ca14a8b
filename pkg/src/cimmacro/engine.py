"""One column-wise CIM engine: 64-row MAC with sign steering, then the
9-step differential binary-search readout on the same bit-line pair.

The batch functions (``mac_drops``, ``binary_search_readout``, ``run_batch``)
take a leading batch axis and are what the experiments use; ``EngineState``
wraps them for single-cycle, stateful use.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import encoding
from .analog import (
    AnalogParams,
    BitlinePair,
    IDEAL_NOISE,
    NoiseParams,
    check_headroom,
    discharge_volts,
    noisy_widths,
    precharge,
    sample_mismatch,
)
from .errors import NotPrecharged, ReadoutBeforeMac, ValidationError, WrongLength

ROWS = encoding.ROWS
OUT_BITS = 9
CODE_MAX = 255
BIT_WEIGHTS = 2 ** np.arange(OUT_BITS - 1, -1, -1)  # 256 ... 1
CELL_WEIGHTS = np.array([1, 2, 4])


def _largest_divisor_at_most(value: int, limit: int) -> int:
    for d in range(min(value, limit), 0, -1):
        if value % d == 0:
            return d
    return 1


@dataclass(frozen=True)
class ReadoutSchedule:
    """Per-step (branch count, pulse quanta) pairs for the 9 readout steps.

    Step k (1-based) must remove ``r * 2**(9-k)`` quanta, so one ADC LSB of the
    raw search equals ``r`` MAC quanta.
    """

    steps: tuple[tuple[int, int], ...]
    r: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((int(n), int(q)) for n, q in self.steps))
        validate_schedule(self.steps, self.r)

    @classmethod
    def build(cls, r: int, max_branches: int = 64, min_quanta: int = 1) -> "ReadoutSchedule":
        """Per step, the most branches (<= ``max_branches``) that divide the step
        amount while keeping the pulse at least ``min_quanta`` long.

        ``build(16)`` is the wide 64-branch layout; few branches with long pulses
        trade mismatch averaging for less DTC jitter, since one readout pulse
        drives every selected branch and its width error is multiplied by n.
        """
        if r < 1:
            raise ValidationError("schedule.r must be >= 1")
        steps = []
        for k in range(1, OUT_BITS + 1):
            amount = r * 2 ** (OUT_BITS - k)
            limit = max(1, min(max_branches, amount // max(min_quanta, 1)))
            n = _largest_divisor_at_most(amount, limit)
            steps.append((n, amount // n))
        return cls(tuple(steps), r)

    @property
    def amounts(self) -> np.ndarray:
        return np.array([n * q for n, q in self.steps])


def validate_schedule(steps, r: int) -> None:
    if not isinstance(r, (int, np.integer)) or r < 1:
        raise ValidationError("schedule.r must be an integer >= 1")
    if len(steps) != OUT_BITS:
        raise ValidationError(f"schedule needs {OUT_BITS} steps, got {len(steps)}")
    for k, (n, q) in enumerate(steps, start=1):
        if not 1 <= n <= ROWS:
            raise ValidationError(f"schedule step {k}: n_branches={n} outside [1, 64]")
        if q < 1:
            raise ValidationError(f"schedule step {k}: pulse_quanta must be >= 1")
        if n * q != r * 2 ** (OUT_BITS - k):
            raise ValidationError(
                f"schedule step {k}: n*q = {n * q} != r*2^(9-k) = {r * 2 ** (OUT_BITS - k)}"
            )


@dataclass(frozen=True)
class AdcCode:
    decisions: tuple[int, ...]
    value: int
    clipped: bool

    @property
    def raw(self) -> int:
        return int(np.dot(self.decisions, BIT_WEIGHTS))


def reconstruct(decisions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map comparator signs to (raw, value, clipped).

    raw = sum s_k 2^(9-k) is always odd; value = floor(raw / 2) so each code v
    stands for the mid-rise level 2v + 1.  Saturation (every decision equal) is
    the clip indicator.
    """
    decisions = np.asarray(decisions)
    raw = decisions @ BIT_WEIGHTS
    value = np.clip(np.floor_divide(raw, 2), -CODE_MAX, CODE_MAX)
    clipped = np.all(decisions == decisions[..., :1], axis=-1)
    return raw, value, clipped


def code_to_mac(value, r: int, boost: int = 1):
    """Mid-rise reconstruction of a code in MAC units."""
    return (2 * np.asarray(value) + 1) * (r / boost)


def widths_in_quanta(nominal_quanta, p: AnalogParams, n: NoiseParams, rng):
    """Noisy pulse widths in units of tau; exact integers when noiseless."""
    if not n.pulse_noise or rng is None:
        return np.asarray(nominal_quanta, dtype=float)
    return noisy_widths(np.asarray(nominal_quanta, dtype=float) * p.tau, n, rng) / p.tau


def mac_drops(applied, weights, mac_factors, p: AnalogParams, n: NoiseParams = IDEAL_NOISE,
              rng=None, widths=None):
    """Charge removed from (RBL, RBLB) by the MAC phase, in quanta u.

    applied: (B, 64) signed activations driven onto the array.
    weights: (B, 64) or (64,) signed weights; magnitude bits select cells.
    mac_factors: broadcastable to (B, 64, 3), per-cell mismatch.
    widths: optional pre-drawn pulse widths (B, 64, 3) in units of tau, e.g. a
        DTC realisation shared by several engines.

    A product with sign(a)*sign(w) = +1 discharges RBL, otherwise RBLB.
    """
    applied = np.atleast_2d(np.asarray(applied, dtype=np.int64))
    weights = np.broadcast_to(np.asarray(weights, dtype=np.int64), applied.shape)
    if widths is None:
        nominal = np.abs(applied)[..., None] * CELL_WEIGHTS * p.boost
        widths = widths_in_quanta(nominal, p, n, rng)
    bits = (np.abs(weights)[..., None] >> np.arange(3)) & 1
    factors = np.asarray(mac_factors, dtype=float)
    cell_charge = widths * bits if not factors.any() else widths * (1.0 + factors) * bits
    row_charge = cell_charge.sum(axis=-1)
    positive = np.sign(applied) * np.sign(weights) > 0
    drop_rbl = np.where(positive, row_charge, 0.0).sum(axis=-1)
    drop_rblb = np.where(positive, 0.0, row_charge).sum(axis=-1)
    return drop_rbl, drop_rblb


def line_volts(drop, p: AnalogParams):
    """Voltage of a line precharged to vdd after ``drop`` quanta of charge."""
    return discharge_volts(p.vdd, np.asarray(drop) * p.u, p)


def _check_lines(drop_rbl, drop_rblb, p: AnalogParams):
    check_headroom(line_volts(drop_rbl, p), p)
    check_headroom(line_volts(drop_rblb, p), p)


def binary_search_readout(drop_rbl, drop_rblb, sched: ReadoutSchedule, adc_factors, sa_offset,
                          p: AnalogParams, n: NoiseParams = IDEAL_NOISE, rng=None,
                          headroom: bool = True, pulse_group=None):
    """Run the 9 comparisons on lines described by their accumulated drops.

    s_k = +1 when RBLB sits above RBL by more than the comparator offset; the
    higher line is then discharged by the step amount.  Exact ties give -1.
    Returns (decisions, drop_rbl, drop_rblb).

    ``pulse_group`` (B,) lets several engines share one readout-pulse
    realisation per step (the DTC is common to a core).
    """
    d_rbl = np.array(drop_rbl, dtype=float, ndmin=1)
    d_rblb = np.array(drop_rblb, dtype=float, ndmin=1)
    batch = d_rbl.shape[0]
    adc_factors = np.broadcast_to(np.asarray(adc_factors, dtype=float), (batch, ROWS))
    sa_offset = np.broadcast_to(np.asarray(sa_offset, dtype=float), (batch,))
    use_offset = bool(np.any(sa_offset))
    decisions = np.empty((batch, OUT_BITS), dtype=np.int64)
    for k, (n_br, q) in enumerate(sched.steps):
        if use_offset:
            s = np.where(line_volts(d_rblb, p) > line_volts(d_rbl, p) + sa_offset, 1, -1)
        else:
            # same precharge level and monotone discharge: compare charge exactly
            s = np.where(d_rblb < d_rbl, 1, -1)
        decisions[:, k] = s
        if pulse_group is None:
            width = widths_in_quanta(np.full(batch, q), p, n, rng)
        else:
            groups = np.asarray(pulse_group)
            width = widths_in_quanta(np.full(groups.max() + 1, q), p, n, rng)[groups]
        current = (1.0 + adc_factors[:, :n_br]).sum(axis=1)
        step = width * current
        d_rblb = np.where(s > 0, d_rblb + step, d_rblb)
        d_rbl = np.where(s > 0, d_rbl, d_rbl + step)
        if headroom:
            _check_lines(d_rbl, d_rblb, p)
    return decisions, d_rbl, d_rblb


@dataclass
class BatchResult:
    decisions: np.ndarray
    raw: np.ndarray
    value: np.ndarray
    clipped: np.ndarray
    corrected: np.ndarray
    mac_drop_rbl: np.ndarray
    mac_drop_rblb: np.ndarray
    drop_rbl: np.ndarray
    drop_rblb: np.ndarray

    def final_volts(self, p: AnalogParams):
        return line_volts(self.drop_rbl, p), line_volts(self.drop_rblb, p)


def run_batch(applied, weights, sched: ReadoutSchedule, p: AnalogParams,
              n: NoiseParams = IDEAL_NOISE, rng=None, *, mac_factors=0.0, adc_factors=0.0,
              sa_offset=0.0, compensation=0, widths=None, headroom: bool = True,
              pulse_group=None) -> BatchResult:
    """MAC + readout for a batch of independent engine cycles."""
    m_rbl, m_rblb = mac_drops(applied, weights, mac_factors, p, n, rng, widths)
    if headroom:
        _check_lines(m_rbl, m_rblb, p)
    decisions, d_rbl, d_rblb = binary_search_readout(
        m_rbl, m_rblb, sched, adc_factors, sa_offset, p, n, rng, headroom, pulse_group)
    raw, value, clipped = reconstruct(decisions)
    corrected = code_to_mac(value, sched.r, p.boost) + np.asarray(compensation)
    return BatchResult(decisions, raw, value, clipped, corrected, m_rbl, m_rblb, d_rbl, d_rblb)


@dataclass
class EngineState:
    weights: list = field(default_factory=lambda: [encoding.WeightCode(1, 0)] * ROWS)
    mac_branch_factors: np.ndarray = field(default_factory=lambda: np.zeros((ROWS, 3)))
    adc_branch_factors: np.ndarray = field(default_factory=lambda: np.zeros(ROWS))
    sa_offset: float = 0.0
    compensation: int = 0
    bl: BitlinePair = field(default_factory=BitlinePair)
    mac_done: bool = False
    # charge removed from each line since the last precharge, in quanta u
    drop_rbl: float = 0.0
    drop_rblb: float = 0.0

    @classmethod
    def sample(cls, n: NoiseParams, rng: np.random.Generator) -> "EngineState":
        """Fresh engine with mismatch frozen from ``rng`` (one chip instance)."""
        mac = sample_mismatch(ROWS * 3, n, rng).reshape(ROWS, 3)
        adc = sample_mismatch(ROWS, n, rng)
        offset = float(rng.standard_normal() * n.sigma_sa)
        return cls(mac_branch_factors=mac, adc_branch_factors=adc, sa_offset=offset)

    @property
    def weight_values(self) -> np.ndarray:
        return np.array([encoding.decode_weight(w) for w in self.weights], dtype=np.int64)

    def load_weights(self, w: Sequence[int], p: AnalogParams) -> "EngineState":
        if len(w) != ROWS:
            raise WrongLength(f"expected {ROWS} weights, got {len(w)}")
        self.weights = [encoding.encode_weight(v) for v in w]
        self.compensation = encoding.folding_compensation(self.weights)
        return self.precharge(p)

    def precharge(self, p: AnalogParams) -> "EngineState":
        self.bl = precharge(self.bl, p)
        self.drop_rbl = self.drop_rblb = 0.0
        self.mac_done = False
        return self

    def _set_drops(self, d_rbl, d_rblb, p: AnalogParams):
        self.drop_rbl, self.drop_rblb = float(d_rbl), float(d_rblb)
        self.bl = BitlinePair(float(line_volts(self.drop_rbl, p)),
                              float(line_volts(self.drop_rblb, p)), False)

    def mac_phase(self, acts: Sequence[encoding.FoldedAct | int], p: AnalogParams,
                  n: NoiseParams = IDEAL_NOISE, rng=None, widths=None) -> "EngineState":
        """Discharge RBL/RBLB with the row pulses.

        ``acts`` are FoldedAct records or plain signed integers (the unfolded
        path drives raw magnitudes up to 15).
        """
        if not self.bl.precharged:
            raise NotPrecharged("bit-lines must be precharged before the MAC phase")
        if len(acts) != ROWS:
            raise WrongLength(f"expected {ROWS} activations, got {len(acts)}")
        applied = np.array([a.value if isinstance(a, encoding.FoldedAct) else int(a) for a in acts])
        d_rbl, d_rblb = mac_drops(applied[None], self.weight_values, self.mac_branch_factors,
                                  p, n, rng, widths)
        _check_lines(d_rbl, d_rblb, p)
        self._set_drops(d_rbl[0], d_rblb[0], p)
        self.mac_done = True
        return self

    def adc_readout(self, sched: ReadoutSchedule, p: AnalogParams,
                    n: NoiseParams = IDEAL_NOISE, rng=None) -> AdcCode:
        if not self.mac_done:
            raise ReadoutBeforeMac("readout requested before a MAC phase")
        decisions, d_rbl, d_rblb = binary_search_readout(
            self.drop_rbl, self.drop_rblb, sched, self.adc_branch_factors, self.sa_offset, p, n, rng)
        self._set_drops(d_rbl[0], d_rblb[0], p)
        self.mac_done = False
        _, value, clipped = reconstruct(decisions[0])
        return AdcCode(tuple(int(s) for s in decisions[0]), int(value), bool(clipped))

    def mac_and_read(self, acts, sched: ReadoutSchedule, p: AnalogParams,
                     n: NoiseParams = IDEAL_NOISE, rng=None, *, folded: bool = True):
        """One full cycle; returns (AdcCode, corrected MAC estimate).

        The fold compensation 8*sum(w) is only added when ``folded``.
        """
        if not self.bl.precharged:
            self.precharge(p)
        self.mac_phase(acts, p, n, rng)
        code = self.adc_readout(sched, p, n, rng)
        corrected = float(code_to_mac(code.value, sched.r, p.boost))
        if folded:
            corrected += self.compensation
        return code, corrected
