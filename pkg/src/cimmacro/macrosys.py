"""Full macro of 4 cores x 16 column engines, with matrix tiling and a bit-serial 8-b mode."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import encoding
from .analog import AnalogParams, IDEAL_NOISE, NoiseParams, rng_for, sample_mismatch
from .engine import CELL_WEIGHTS, ROWS, ReadoutSchedule, run_batch, widths_in_quanta
from .errors import NoWork, OutOfRange, ShapeMismatch, TooManyColumns, ValidationError

CORES = 4
ENGINES_PER_CORE = 16
ENGINES = CORES * ENGINES_PER_CORE
W_BITS = 4
ACT_BITS = 4
OUT_BITS = 9
CAPACITY_BITS = CORES * ENGINES_PER_CORE * ROWS * W_BITS

# seed-stream tags keep chip mismatch and per-run noise independent
CHIP_STREAM = 0xC41B
RUN_STREAM = 0x5EED


@dataclass(frozen=True)
class MacroConfig:
    analog: AnalogParams = field(default_factory=AnalogParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    schedule: ReadoutSchedule | None = None
    folding_enabled: bool = True
    boost_enabled: bool = False
    clock_hz: float = 200e6
    # used only when ``schedule`` is None
    max_branches: int = 2
    min_quanta: int = 64
    dtc_shared: bool = True
    cores: int = CORES
    engines_per_core: int = ENGINES_PER_CORE
    rows: int = ROWS
    act_bits: int = ACT_BITS
    w_bits: int = W_BITS
    out_bits: int = OUT_BITS

    def __post_init__(self):
        if (self.cores, self.engines_per_core, self.rows, self.act_bits, self.w_bits) != (
                CORES, ENGINES_PER_CORE, ROWS, ACT_BITS, W_BITS):
            raise ValidationError("geometry is fixed at 4 cores x 16 engines x 64 rows x 4b")
        if self.cores * self.engines_per_core * self.rows * self.w_bits != CAPACITY_BITS:
            raise ValidationError("macro memory must be 16384 bits")
        if self.out_bits != OUT_BITS:
            raise ValidationError("out_bits must be 9")
        if not 100e6 <= self.clock_hz <= 200e6:
            raise ValidationError("clock_hz must lie in [100 MHz, 200 MHz]")
        if self.boost_enabled != (self.analog.boost == 2):
            object.__setattr__(self, "analog", self.analog.with_boost(2 if self.boost_enabled else 1))
        if not 1 <= self.max_branches <= ROWS:
            raise ValidationError("schedule.max_branches must be within [1, 64]")
        if self.min_quanta < 1:
            raise ValidationError("schedule.min_quanta must be >= 1")

    @property
    def r(self) -> int:
        return self.readout.r

    @property
    def auto_r(self) -> int:
        """ADC LSB (in MAC quanta) that puts the mode's dynamic range inside full scale."""
        return encoding.dynamic_range(self.folding_enabled, ROWS) // (ROWS * encoding.W_MAG_MAX)

    @property
    def readout(self) -> ReadoutSchedule:
        if self.schedule is not None:
            return self.schedule
        return ReadoutSchedule.build(self.auto_r, self.max_branches, self.min_quanta)

    @property
    def r_eff(self) -> float:
        """MAC units per raw readout step."""
        return self.r / self.analog.boost

    @property
    def code_lsb(self) -> float:
        """MAC units per 9-bit code."""
        return 2 * self.r_eff

    @property
    def full_scale(self) -> float:
        """Largest |array-domain MAC| the readout represents without saturating."""
        return (2 ** OUT_BITS - 1) * self.r_eff

    def with_modes(self, folding: bool | None = None, boost: bool | None = None) -> "MacroConfig":
        folding = self.folding_enabled if folding is None else folding
        boost = self.boost_enabled if boost is None else boost
        return replace(self, folding_enabled=folding, boost_enabled=boost,
                       analog=self.analog.with_boost(2 if boost else 1))

    def with_noise(self, **changes) -> "MacroConfig":
        return replace(self, noise=replace(self.noise, **changes))


@dataclass
class MacroOutput:
    corrected: np.ndarray
    codes: np.ndarray
    clipped: np.ndarray
    cycles: int

    def __post_init__(self):
        if len(self.corrected) != ENGINES:
            raise ShapeMismatch("macro output must hold one value per engine (64)")


class Macro:
    """One simulated chip instance: per-cell mismatch and comparator offsets
    are drawn once from ``chip_seed`` and stay frozen."""

    def __init__(self, cfg: MacroConfig, chip_seed: int | None = None):
        self.cfg = cfg
        seed = cfg.noise.seed if chip_seed is None else chip_seed
        rng = rng_for(seed, CHIP_STREAM)
        n = cfg.noise
        self.mac_factors = sample_mismatch(ENGINES * ROWS * 3, n, rng).reshape(ENGINES, ROWS, 3)
        self.adc_factors = sample_mismatch(ENGINES * ROWS, n, rng).reshape(ENGINES, ROWS)
        self.sa_offsets = rng.standard_normal(ENGINES) * n.sigma_sa
        self._runs = 0

    def next_rng(self) -> np.random.Generator:
        self._runs += 1
        return rng_for(self.cfg.noise.seed, RUN_STREAM, self._runs)

    def run(self, weights, acts, rng=None) -> MacroOutput:
        """One 4-bit MAC cycle on all 64 engines.

        weights: (64 rows, 64 columns) in [-7, 7]; column j lives on engine j,
            core j // 16.
        acts: (64,) raw activations shared by every core, or (4, 64) per core.
        """
        cfg = self.cfg
        w = encoding.check_weights(weights)
        if w.shape != (ROWS, ENGINES):
            raise ShapeMismatch(f"weights must be (64, 64), got {w.shape}")
        a = encoding.check_acts(acts)
        if a.shape == (ROWS,):
            a = np.broadcast_to(a, (CORES, ROWS))
        if a.shape != (CORES, ROWS):
            raise ShapeMismatch(f"acts must be (64,) or (4, 64), got {a.shape}")
        rng = self.next_rng() if rng is None else rng
        applied_core = a - encoding.FOLD_OFFSET if cfg.folding_enabled else a
        core_of = np.arange(ENGINES) // ENGINES_PER_CORE
        applied = applied_core[core_of]
        col_w = w.T
        p, n = cfg.analog, cfg.noise
        widths = None
        group = None
        if n.pulse_noise and cfg.dtc_shared:
            nominal = np.abs(applied_core)[..., None] * CELL_WEIGHTS * p.boost
            widths = widths_in_quanta(nominal, p, n, rng)[core_of]
            group = core_of
        comp = encoding.FOLD_OFFSET * col_w.sum(axis=1) if cfg.folding_enabled else 0
        res = run_batch(applied, col_w, cfg.readout, p, n, rng,
                        mac_factors=self.mac_factors, adc_factors=self.adc_factors,
                        sa_offset=self.sa_offsets, compensation=comp, widths=widths,
                        pulse_group=group)
        return MacroOutput(res.corrected, res.value, res.clipped, 1)


def run_macro(cfg: MacroConfig, weights, acts, rng=None, macro: Macro | None = None) -> MacroOutput:
    macro = Macro(cfg) if macro is None else macro
    return macro.run(weights, acts, rng)


@dataclass(frozen=True)
class Tile:
    """Row block ``row_tile`` of columns ``col_start:col_start+n_cols``.

    Column ``col_start + j`` occupies engine ``j`` (core ``j // 16``) in
    invocation ``invocation``; rows beyond the matrix are zero-padded.
    """

    invocation: int
    row_tile: int
    col_start: int
    n_cols: int
    n_rows: int

    @property
    def row_start(self) -> int:
        return self.row_tile * ROWS


@dataclass
class Placement:
    shape: tuple[int, int]
    tiles: list[Tile]
    blocks: list[np.ndarray]  # each (64, 64) engine-major weight image

    @property
    def invocations(self) -> int:
        return len(self.tiles)

    @property
    def mapped_bits(self) -> int:
        return sum(t.n_cols * ROWS * W_BITS for t in self.tiles)


def map_matrix(m, streaming: bool = True) -> Placement:
    """Tile a (rows x cols) weight matrix onto 64-row x 64-engine macro images.

    Columns are placed column-major: column c goes to engine c % 64 of column
    block c // 64.  Rows are split into 64-row tiles whose digital outputs
    are summed.  Each (row tile, column block) pair is one macro invocation.
    """
    m = encoding.check_weights(m)
    if m.ndim != 2:
        raise ShapeMismatch("weight matrix must be 2-D")
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        raise NoWork("empty weight matrix")
    n_rt = -(-rows // ROWS)
    n_cb = -(-cols // ENGINES)
    if not streaming and n_rt * n_cb > 1:
        raise TooManyColumns(f"{rows}x{cols} needs {n_rt * n_cb} macro images; streaming disabled")
    tiles, blocks = [], []
    for cb in range(n_cb):
        for rt in range(n_rt):
            c0, r0 = cb * ENGINES, rt * ROWS
            sub = m[r0:r0 + ROWS, c0:c0 + ENGINES]
            block = np.zeros((ROWS, ENGINES), dtype=np.int64)
            block[:sub.shape[0], :sub.shape[1]] = sub
            tiles.append(Tile(len(tiles), rt, c0, sub.shape[1], sub.shape[0]))
            blocks.append(block)
    return Placement((rows, cols), tiles, blocks)


def unmap_matrix(pl: Placement) -> np.ndarray:
    """Inverse of ``map_matrix``."""
    out = np.zeros(pl.shape, dtype=np.int64)
    for t, b in zip(pl.tiles, pl.blocks):
        out[t.row_start:t.row_start + t.n_rows, t.col_start:t.col_start + t.n_cols] = \
            b[:t.n_rows, :t.n_cols]
    return out


@dataclass
class MatvecResult:
    outputs: np.ndarray      # (N, cols) or (cols,) for a single input vector
    clip_counts: np.ndarray
    invocations: int
    bound: np.ndarray        # worst-case ideal-mode quantisation error per column


def matmul(macro: Macro, m, acts, placement: Placement | None = None,
           rng=None) -> MatvecResult:
    """Y = acts @ m for a (rows x cols) matrix in [-7, 7] and raw acts (N, rows).

    Every input vector is an independent macro cycle per tile; the DTC pulse
    realisation is shared by the 16 engines of a core within a cycle.
    """
    cfg = macro.cfg
    pl = map_matrix(m) if placement is None else placement
    rows, cols = pl.shape
    a = encoding.check_acts(acts)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != rows:
        raise ShapeMismatch(f"acts must have {rows} columns, got {a.shape[1]}")
    n_in = a.shape[0]
    rng = macro.next_rng() if rng is None else rng
    p, n = cfg.analog, cfg.noise
    out = np.zeros((n_in, cols))
    clips = np.zeros((n_in, cols), dtype=np.int64)
    bound = np.zeros(cols)
    for t, block in zip(pl.tiles, pl.blocks):
        a_tile = np.zeros((n_in, ROWS), dtype=np.int64)
        a_tile[:, :t.n_rows] = a[:, t.row_start:t.row_start + t.n_rows]
        applied = a_tile - encoding.FOLD_OFFSET if cfg.folding_enabled else a_tile
        eng = np.arange(t.n_cols)
        core = eng // ENGINES_PER_CORE
        n_core = core.max() + 1
        # batch index = (input, engine)
        applied_b = np.repeat(applied, t.n_cols, axis=0)
        col_w = block.T[eng]
        w_b = np.tile(col_w, (n_in, 1))
        eng_b = np.tile(eng, n_in)
        group = (np.arange(n_in)[:, None] * n_core + core[None, :]).ravel()
        widths = None
        if n.pulse_noise and cfg.dtc_shared:
            nominal = np.abs(applied)[:, None, :, None] * CELL_WEIGHTS * p.boost
            nominal = np.broadcast_to(nominal, (n_in, n_core, ROWS, 3))
            widths = widths_in_quanta(nominal, p, n, rng).reshape(n_in * n_core, ROWS, 3)[group]
        comp = encoding.FOLD_OFFSET * w_b.sum(axis=1) if cfg.folding_enabled else 0
        res = run_batch(applied_b, w_b, cfg.readout, p, n, rng,
                        mac_factors=macro.mac_factors[eng_b], adc_factors=macro.adc_factors[eng_b],
                        sa_offset=macro.sa_offsets[eng_b], compensation=comp, widths=widths,
                        pulse_group=group if cfg.dtc_shared else None)
        sl = slice(t.col_start, t.col_start + t.n_cols)
        out[:, sl] += res.corrected.reshape(n_in, t.n_cols)
        clips[:, sl] += res.clipped.reshape(n_in, t.n_cols)
        bound[sl] += cfg.r_eff
    if single:
        out, clips = out[0], clips[0]
    return MatvecResult(out, clips, pl.invocations * n_in, bound)


def matvec(macro: Macro, m, acts, placement: Placement | None = None, rng=None) -> MatvecResult:
    a = np.asarray(acts)
    if a.ndim != 1:
        raise ShapeMismatch("matvec takes a single activation vector")
    return matmul(macro, m, a, placement, rng)


def split_weights_8b(w) -> list[tuple[int, np.ndarray]]:
    """Signed 8-b weights -> (scale, digit matrix) with digits in [-7, 7].

    The array cells hold a sign plus 3 magnitude bits, so the 7-bit magnitude
    is split base 8: |w| = 64*d2 + 8*d1 + d0, each digit carrying the sign.
    """
    w = np.asarray(w, dtype=np.int64)
    if w.size and (w.min() < -127 or w.max() > 127):
        raise OutOfRange("8-b weights must lie in [-127, 127]")
    sign = np.where(w < 0, -1, 1)
    mag = np.abs(w)
    return [(8 ** k, sign * ((mag >> (3 * k)) & 7)) for k in range(3)]


def split_acts_8b(a) -> list[tuple[int, np.ndarray]]:
    a = np.asarray(a, dtype=np.int64)
    if a.size and (a.min() < 0 or a.max() > 255):
        raise OutOfRange("8-b activations must lie in [0, 255]")
    return [(1, a & 15), (16, a >> 4)]


@dataclass
class Run8bResult:
    outputs: np.ndarray
    bound: np.ndarray
    passes: int
    invocations: int


def run_8bit(cfg: MacroConfig, weights_8b, acts_8b, macro: Macro | None = None) -> Run8bResult:
    """8-b x 8-b matrix-vector product composed from 4-b macro passes.

    Passes whose activation nibble or weight digit is all zero are skipped.
    """
    macro = Macro(cfg) if macro is None else macro
    w = np.atleast_2d(np.asarray(weights_8b, dtype=np.int64))
    if w.shape[0] == 1 and np.ndim(weights_8b) == 1:
        w = w.T
    a = np.asarray(acts_8b, dtype=np.int64)
    if a.shape != (w.shape[0],):
        raise ShapeMismatch("acts_8b length must equal weight rows")
    out = np.zeros(w.shape[1])
    bound = np.zeros(w.shape[1])
    passes = invocations = 0
    for a_scale, a_nib in split_acts_8b(a):
        if not a_nib.any():
            continue
        for w_scale, w_dig in split_weights_8b(w):
            if not w_dig.any():
                continue
            res = matvec(macro, w_dig, a_nib)
            out += a_scale * w_scale * res.outputs
            bound += a_scale * w_scale * res.bound
            passes += 1
            invocations += res.invocations
    return Run8bResult(out, bound, passes, invocations)


def ideal_noise_config(cfg: MacroConfig) -> MacroConfig:
    return replace(cfg, noise=replace(IDEAL_NOISE, seed=cfg.noise.seed))
