"""Characterisation: transfer curve, DNL/INL, 1-sigma error, signal margin
and the conv-layer noise-suppression experiment."""
from __future__ import annotations

import math
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import encoding
from .analog import rng_for
from .engine import ROWS, run_batch
from .errors import InsufficientCoverage, UnrealizableTarget
from .macrosys import ENGINES, Macro, MacroConfig, matmul

# normalisation for the 1-sigma error: largest |sum a*w| of a 64-row 4b x 4b MAC
FULL_SCALE = encoding.dynamic_range(folded=False, rows=ROWS)
DEFAULT_POINTS = 9000
DEFAULT_ACT_SCALE = 1.25

# seed streams
_ACTS, _WEIGHTS, _NOISE, _IMAGES = 11, 12, 13, 14


def relu_acts(rng: np.random.Generator, shape, scale: float = DEFAULT_ACT_SCALE) -> np.ndarray:
    """Post-ReLU 4-b activations: a discretised half-normal piled up near zero."""
    return np.minimum(encoding.ACT_MAX, np.rint(np.abs(rng.normal(0.0, scale, shape)))).astype(np.int64)


def uniform_weights(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(-encoding.W_MAG_MAX, encoding.W_MAG_MAX + 1, shape)


# ---------------------------------------------------------------- transfer curve

@dataclass(frozen=True)
class TransferPoint:
    ideal_mac: int
    mean_code: float
    std_code: float
    n_trials: int


@lru_cache(maxsize=None)
def _product_tables(peak_act: int):
    products = {}
    for m in range(1, peak_act + 1):
        for w in range(1, encoding.W_MAG_MAX + 1):
            products.setdefault(m * w, (m, w))
    sums = {0: ()}
    for _ in range(4):
        for s, parts in list(sums.items()):
            for pr in products:
                sums.setdefault(s + pr, parts + (pr,))
    return products, sums


def realize_target(target: int, folded: bool, rows: int = ROWS) -> tuple[np.ndarray, np.ndarray]:
    """Raw activations and weights whose array-domain MAC equals ``target``.

    Every product carries the sign of the target, built from the largest
    per-row product first; leftovers are solved with at most four rows.
    """
    products, sums = _product_tables(encoding.FOLD_OFFSET if folded else encoding.ACT_MAX)
    big = max(products)
    mag = abs(int(target))
    n_big = max(0, mag // big - 2)
    rest = mag - n_big * big
    while rest not in sums and n_big > 0:
        n_big -= 1
        rest += big
    if rest not in sums or n_big + len(sums[rest]) > rows:
        raise UnrealizableTarget(f"MAC target {target} cannot be built from {rows} rows")
    sign = 1 if target >= 0 else -1
    mags = [products[big]] * n_big + [products[pr] for pr in sums[rest]]
    applied = np.zeros(rows, dtype=np.int64)
    weights = np.zeros(rows, dtype=np.int64)
    for i, (m, w) in enumerate(mags):
        if folded:
            # magnitude 8 only exists on the negative side of the folded range
            applied[i] = -m
            weights[i] = -sign * w
        else:
            applied[i] = m
            weights[i] = sign * w
    raw = applied + encoding.FOLD_OFFSET if folded else applied
    if folded:
        raw[len(mags):] = encoding.FOLD_OFFSET
    return raw, weights


def transfer_curve(cfg: MacroConfig, sweep: Sequence[int], trials: int = 1, *,
                   engine: int = 0, seed: int | None = None) -> list[TransferPoint]:
    """Mean/std readout code versus array-domain MAC value.

    ``sweep`` values are in MAC units (sum of applied activation x weight);
    ``engine`` selects which engine of the chip instance is measured.
    """
    macro = Macro(cfg)
    seed = cfg.noise.seed if seed is None else seed
    rng = rng_for(seed, _NOISE)
    p, n = cfg.analog, cfg.noise
    raws, ws = zip(*(realize_target(t, cfg.folding_enabled) for t in sweep))
    raw = np.repeat(np.array(raws), trials, axis=0)
    w = np.repeat(np.array(ws), trials, axis=0)
    applied = encoding.applied_activations(raw, cfg.folding_enabled)
    res = run_batch(applied, w, cfg.readout, p, n, rng,
                    mac_factors=macro.mac_factors[engine], adc_factors=macro.adc_factors[engine],
                    sa_offset=macro.sa_offsets[engine], headroom=False)
    codes = res.value.reshape(len(sweep), trials).astype(float)
    return [TransferPoint(int(t), float(c.mean()), float(c.std()), trials)
            for t, c in zip(sweep, codes)]


def ideal_code(mac, r: int, boost: int = 1):
    """Readout code of a noiseless engine: code v covers (2v, 2v+2] raw steps."""
    d = np.asarray(mac) * boost
    # ceil(d / (2r)) - 1 in exact integer arithmetic
    v = -np.floor_divide(-d, 2 * r) - 1
    return np.clip(v, -255, 255)


# ---------------------------------------------------------------- DNL / INL

@dataclass
class Linearity:
    codes: np.ndarray   # codes with a DNL entry
    dnl: np.ndarray
    edge_codes: np.ndarray
    edges: np.ndarray   # MAC value where the mean code first reaches k - 1/2
    inl: np.ndarray     # per edge code, endpoint fit
    lsb: float          # endpoint-fit code width in MAC units

    @property
    def missing_codes(self) -> np.ndarray:
        return self.codes[self.dnl <= -1 + 1e-12]


def dnl_inl(curve: Sequence[TransferPoint]) -> Linearity:
    x = np.array([pt.ideal_mac for pt in curve], dtype=float)
    y = np.array([pt.mean_code for pt in curve])
    if len(x) < 3 or np.any(np.diff(x) <= 0):
        raise InsufficientCoverage("transfer curve must be a strictly increasing sweep")
    lo = int(math.floor(y[0] + 0.5))
    hi = int(math.floor(y[-1] + 0.5))
    edge_codes = np.arange(lo + 1, hi + 1)
    if len(edge_codes) < 3:
        raise InsufficientCoverage("transfer curve spans fewer than 3 code transitions")
    edges = np.empty(len(edge_codes))
    for i, k in enumerate(edge_codes):
        hit = np.nonzero(y >= k - 0.5)[0]
        edges[i] = x[hit[0]]
    lsb = (edges[-1] - edges[0]) / (len(edges) - 1)
    if lsb <= 0:
        raise InsufficientCoverage("degenerate transfer curve")
    dnl = np.diff(edges) / lsb - 1.0
    inl = (edges - edges[0]) / lsb - np.arange(len(edges))
    return Linearity(edge_codes[:-1], dnl, edge_codes, edges, inl, lsb)


# ---------------------------------------------------------------- 1-sigma error

@dataclass
class SigmaError:
    sigma: float          # std of (corrected - ideal) / FULL_SCALE
    mean: float
    rms: float
    n_points: int
    clipped: int
    folding: bool
    boost: bool
    normalization: str = "full_scale"


def random_workload(seed: int, n_points: int, scale: float = DEFAULT_ACT_SCALE):
    acts = relu_acts(rng_for(seed, _ACTS), (n_points, ROWS), scale)
    weights = uniform_weights(rng_for(seed, _WEIGHTS), (n_points, ROWS))
    return acts, weights


def sigma_error(cfg: MacroConfig, n_points: int = DEFAULT_POINTS, *, folding: bool | None = None,
                boost: bool | None = None, act_scale: float = DEFAULT_ACT_SCALE,
                seed: int | None = None, macro: Macro | None = None) -> SigmaError:
    """Relative 1-sigma output error over random ReLU-like test points.

    Points are spread round-robin over the 64 engines of one chip instance.
    Every random stream depends only on ``seed``, so runs that
    differ only in the enhancement flags are paired.
    """
    cfg = cfg.with_modes(folding, boost)
    seed = cfg.noise.seed if seed is None else seed
    macro = Macro(cfg, chip_seed=seed) if macro is None else macro
    acts, weights = random_workload(seed, n_points, act_scale)
    eng = np.arange(n_points) % ENGINES
    applied = encoding.applied_activations(acts, cfg.folding_enabled)
    comp = encoding.FOLD_OFFSET * weights.sum(axis=1) if cfg.folding_enabled else 0
    res = run_batch(applied, weights, cfg.readout, cfg.analog, cfg.noise, rng_for(seed, _NOISE),
                    mac_factors=macro.mac_factors[eng], adc_factors=macro.adc_factors[eng],
                    sa_offset=macro.sa_offsets[eng], compensation=comp)
    err = (res.corrected - (acts * weights).sum(axis=1)) / FULL_SCALE
    return SigmaError(float(err.std()), float(err.mean()), float(np.sqrt(np.mean(err ** 2))),
                      n_points, int(res.clipped.sum()), cfg.folding_enabled, cfg.boost_enabled)


def quantization_floor(cfg: MacroConfig) -> float:
    """1-sigma error of a uniform quantiser with the mode's code width."""
    return cfg.code_lsb / math.sqrt(12) / FULL_SCALE


@dataclass
class Calibration:
    k_narrow: float
    baseline: float
    target: float
    bracket: tuple[float, float]


def calibrate(cfg: MacroConfig, target: float = 0.013, n_points: int = DEFAULT_POINTS, *,
              act_scale: float = DEFAULT_ACT_SCALE, bracket=(1e-25, 1e-21),
              seed: int | None = None) -> Calibration:
    """Fit ``k_narrow`` so the baseline (no folding, no boost) 1-sigma error hits ``target``.

    sigma_edge, w_floor, sigma_branch and sigma_sa are held at the values in
    ``cfg``; with paired seeds the error is a deterministic function of k_narrow.
    """
    base = cfg.with_modes(False, False)

    def f(k):
        return sigma_error(base.with_noise(k_narrow=k), n_points, act_scale=act_scale,
                           seed=seed).sigma - target

    k = brentq(f, *bracket, xtol=1e-30, rtol=1e-6)
    return Calibration(k, f(k) + target, target, tuple(bracket))


# ---------------------------------------------------------------- signal margin

@dataclass(frozen=True)
class MarginReport:
    step_size: float           # volts per MAC unit over the usable headroom
    sigma: float               # volts
    margin: float              # step_size - 2 * sigma
    headroom_utilization: float
    clip_fraction: float = 0.0

    def __post_init__(self):
        if not math.isclose(self.margin, self.step_size - 2 * self.sigma, rel_tol=0, abs_tol=1e-15):
            raise ValueError("margin must equal step_size - 2*sigma")


def margin_report(step: float, sigma: float, utilization: float, clip_fraction: float = 0.0) -> MarginReport:
    return MarginReport(step, sigma, step - 2 * sigma, utilization, clip_fraction)


def step_size(cfg: MacroConfig) -> float:
    """MAC step: the headroom divided by the mode's output dynamic range, x boost."""
    return cfg.analog.vpp_mac / encoding.dynamic_range(cfg.folding_enabled, ROWS) * cfg.analog.boost


def step_ratio() -> float:
    """Folded over unfolded step size: the ratio of the two dynamic ranges, 15/8."""
    return encoding.dynamic_range(False, ROWS) / encoding.dynamic_range(True, ROWS)


def signal_margin(cfg: MacroConfig, n_points: int = 64, trials: int = 64, *,
                  act_scale: float = DEFAULT_ACT_SCALE, seed: int | None = None) -> MarginReport:
    """Step size and analog MAC spread, with the resulting margin, for the configured mode.

    sigma is the RMS over ``n_points`` representative ReLU-like inputs of the
    per-input std of the analog differential (noise and mismatch only), in
    MAC units, converted to volts with the step size.
    """
    seed = cfg.noise.seed if seed is None else seed
    step = step_size(cfg)
    acts, weights = random_workload(seed, n_points, act_scale)
    applied = encoding.applied_activations(acts, cfg.folding_enabled)
    ideal = np.abs((applied * weights).sum(axis=1))
    utilization = float(np.quantile(ideal, 0.99) / cfg.full_scale)
    clip_fraction = float(np.mean(ideal > cfg.full_scale))
    if cfg.noise.ideal:
        return margin_report(step, 0.0, utilization, clip_fraction)
    from .engine import mac_drops
    macro = Macro(cfg, chip_seed=seed)
    rng = rng_for(seed, _NOISE)
    eng = np.repeat(np.arange(n_points) % ENGINES, trials)
    d_rbl, d_rblb = mac_drops(np.repeat(applied, trials, axis=0), np.repeat(weights, trials, axis=0),
                              macro.mac_factors[eng], cfg.analog, cfg.noise, rng)
    diff = (d_rbl - d_rblb).reshape(n_points, trials) / cfg.analog.boost
    sigma_mac = float(np.sqrt(np.mean(diff.var(axis=1))))
    return margin_report(step, sigma_mac * step, utilization, clip_fraction)


# ---------------------------------------------------------------- conv layer

@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int = 16
    out_channels: int = 16
    kernel: int = 3
    height: int = 16
    width: int = 16


def im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """(C, H, W) -> (H*W, C*k*k) patches with zero 'same' padding."""
    c, h, w = x.shape
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((h * w, c * kernel * kernel), dtype=x.dtype)
    idx = 0
    for ci in range(c):
        for dy in range(kernel):
            for dx in range(kernel):
                cols[:, idx] = xp[ci, dy:dy + h, dx:dx + w].ravel()
                idx += 1
    return cols


@dataclass
class NoiseSuppression:
    ratios: np.ndarray     # per image: RMS noise error unfolded / folded
    rms_unfolded: np.ndarray
    rms_folded: np.ndarray
    degenerate: bool

    @property
    def min(self) -> float:
        return float(self.ratios.min())

    @property
    def max(self) -> float:
        return float(self.ratios.max())

    @property
    def mean(self) -> float:
        return float(self.ratios.mean())


def conv_outputs(cfg: MacroConfig, weights: np.ndarray, patches: np.ndarray, seed: int, image: int):
    macro = Macro(cfg, chip_seed=seed)
    return matmul(macro, weights, patches, rng=rng_for(seed, _IMAGES, image)).outputs


def noise_suppression_experiment(cfg: MacroConfig, layer: ConvLayerSpec = ConvLayerSpec(),
                                 n_images: int = 10, *, act_scale: float = DEFAULT_ACT_SCALE,
                                 seed: int | None = None, workers: int = 1) -> NoiseSuppression:
    """Accumulated analog-noise error on a conv layer, without vs with folding.

    The noise error of an output is its simulated value minus the noiseless
    simulation of the same mode, so the shared quantisation is excluded.
    Boost is off in both arms. Every image has its own random streams, so the
    result does not depend on ``workers``.
    """
    seed = cfg.noise.seed if seed is None else seed
    wrng = rng_for(seed, _WEIGHTS)
    weights = uniform_weights(wrng, (layer.in_channels * layer.kernel ** 2, layer.out_channels))
    ideal_cfg = replace(cfg, noise=replace(cfg.noise, sigma_edge=0.0, k_narrow=0.0,
                                           sigma_branch=0.0, sigma_sa=0.0))

    def one(i):
        x = relu_acts(rng_for(seed, _ACTS, i), (layer.in_channels, layer.height, layer.width), act_scale)
        patches = im2col(x, layer.kernel)
        out = []
        for folded in (False, True):
            noisy = conv_outputs(cfg.with_modes(folded, False), weights, patches, seed, i)
            clean = conv_outputs(ideal_cfg.with_modes(folded, False), weights, patches, seed, i)
            out.append(float(np.sqrt(np.mean((noisy - clean) ** 2))))
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(n_images)))
    else:
        rows = [one(i) for i in range(n_images)]
    unf, fol = np.array(rows).reshape(n_images, 2).T
    degenerate = bool(np.all(unf == 0) and np.all(fol == 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(fol > 0, unf / np.where(fol > 0, fol, 1.0), np.where(unf > 0, np.inf, 1.0))
    return NoiseSuppression(ratios, unf, fol, degenerate)
