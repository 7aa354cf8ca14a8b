"""Sign-magnitude number formats and the MAC-folding transform.

Weights are 4-bit sign-magnitude (sign cell + three magnitude cells).
Activations arrive as unsigned 4-bit post-ReLU values; folding shifts them
by -8 so the analog array sees a signed magnitude in [0, 8].
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import OutOfRange, WrongLength

ROWS = 64
FOLD_OFFSET = 8
ACT_MAX = 15
W_MAG_MAX = 7


@dataclass(frozen=True)
class WeightCode:
    sign: int
    magnitude: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise OutOfRange(f"weight sign must be +1 or -1, got {self.sign}")
        if not 0 <= self.magnitude <= W_MAG_MAX:
            raise OutOfRange(f"weight magnitude {self.magnitude} does not fit 3 bits")
        if self.magnitude == 0 and self.sign == -1:
            object.__setattr__(self, "sign", 1)

    @property
    def bits(self) -> tuple[int, int, int]:
        """Magnitude cells W[0], W[1], W[2]."""
        return tuple((self.magnitude >> b) & 1 for b in range(3))


@dataclass(frozen=True)
class RawAct:
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= ACT_MAX:
            raise OutOfRange(f"activation {self.value} outside [0, {ACT_MAX}]")


@dataclass(frozen=True)
class FoldedAct:
    sign: int
    magnitude: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise OutOfRange(f"activation sign must be +1 or -1, got {self.sign}")
        if not 0 <= self.magnitude <= FOLD_OFFSET:
            raise OutOfRange(f"folded magnitude {self.magnitude} outside [0, 8]")
        if self.magnitude == 0 and self.sign == -1:
            object.__setattr__(self, "sign", 1)

    @property
    def value(self) -> int:
        return self.sign * self.magnitude


def encode_weight(v: int) -> WeightCode:
    v = int(v)
    if not -W_MAG_MAX <= v <= W_MAG_MAX:
        raise OutOfRange(f"weight {v} outside [-7, 7]")
    return WeightCode(1 if v >= 0 else -1, abs(v))


def decode_weight(w: WeightCode) -> int:
    return w.sign * w.magnitude


def fold_activation(a: RawAct | int) -> FoldedAct:
    value = a.value if isinstance(a, RawAct) else RawAct(int(a)).value
    shifted = value - FOLD_OFFSET
    return FoldedAct(1 if shifted >= 0 else -1, abs(shifted))


def folding_compensation(weights: Sequence[WeightCode]) -> int:
    if len(weights) != ROWS:
        raise WrongLength(f"expected {ROWS} weights, got {len(weights)}")
    return FOLD_OFFSET * sum(decode_weight(w) for w in weights)


def dynamic_range(folded: bool, rows: int = ROWS) -> int:
    """Largest reachable |sum(a' * w)| over ``rows`` rows."""
    if rows < 1:
        raise OutOfRange("rows must be >= 1")
    act_peak = FOLD_OFFSET if folded else ACT_MAX
    return rows * act_peak * W_MAG_MAX


# vectorised helpers used by the engine and the experiments

def check_weights(w) -> np.ndarray:
    w = np.asarray(w)
    if w.size and (not np.issubdtype(w.dtype, np.integer)):
        if not np.all(np.equal(np.mod(w, 1), 0)):
            raise OutOfRange("weights must be integers")
        w = w.astype(np.int64)
    if w.size and (w.min() < -W_MAG_MAX or w.max() > W_MAG_MAX):
        raise OutOfRange("weights outside [-7, 7]")
    return w.astype(np.int64)


def check_acts(a) -> np.ndarray:
    a = np.asarray(a)
    if a.size and (not np.issubdtype(a.dtype, np.integer)):
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise OutOfRange("activations must be integers")
    a = a.astype(np.int64)
    if a.size and (a.min() < 0 or a.max() > ACT_MAX):
        raise OutOfRange("activations outside [0, 15]")
    return a


def applied_activations(acts, folded: bool) -> np.ndarray:
    """Signed values driven onto the array: ``a - 8`` when folding, else ``a``."""
    a = check_acts(acts)
    return a - FOLD_OFFSET if folded else a
