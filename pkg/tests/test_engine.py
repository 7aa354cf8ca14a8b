import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cimmacro import encoding
from cimmacro.analog import AnalogParams, NoiseParams, rng_for
from cimmacro.engine import (EngineState, ReadoutSchedule, binary_search_readout, code_to_mac,
                             line_volts, mac_drops, reconstruct, run_batch)
from cimmacro.errors import (NotPrecharged, OutOfRange, ReadoutBeforeMac, ValidationError,
                             WrongLength)

P = AnalogParams()
R = 8
SCHED = ReadoutSchedule.build(R, max_branches=2, min_quanta=64)


def sar_oracle(d, r):
    """Reference search on an integer differential d = drop_rbl - drop_rblb (units of u)."""
    signs = []
    for k in range(9):
        s = 1 if d > 0 else -1          # RBLB higher when RBL has lost more charge
        signs.append(s)
        d -= s * r * 2 ** (8 - k)
    raw = sum(s * 2 ** (8 - k) for k, s in enumerate(signs))
    return signs, raw, d


def read(d, r=R, sched=None):
    sched = sched or ReadoutSchedule.build(r, 2, 64)
    d = np.asarray(d, dtype=float)
    return run_batch_from_diff(d, sched)


def run_batch_from_diff(d, sched):
    base = 600.0 * sched.r
    dec, d_rbl, d_rblb = binary_search_readout(base + np.maximum(d, 0), base + np.maximum(-d, 0),
                                               sched, 0.0, 0.0, P, headroom=False)
    raw, value, clipped = reconstruct(dec)
    return dec, raw, value, clipped, d_rbl - d_rblb


def test_schedule_wide_table():
    s = ReadoutSchedule.build(16)
    assert s.steps == ((64, 64), (64, 32), (64, 16), (64, 8), (64, 4), (64, 2), (64, 1), (32, 1), (16, 1))


@pytest.mark.parametrize("r", [1, 8, 15, 16, 40])
@pytest.mark.parametrize("nb,mq", [(64, 1), (2, 64), (1, 1)])
def test_schedule_feasible(r, nb, mq):
    s = ReadoutSchedule.build(r, nb, mq)
    for k, (n, q) in enumerate(s.steps, 1):
        assert n * q == r * 2 ** (9 - k)
        assert 1 <= n <= min(64, nb)


def test_schedule_violation_names_step():
    steps = list(ReadoutSchedule.build(16).steps)
    steps[3] = (64, 9)
    with pytest.raises(ValidationError, match="step 4"):
        ReadoutSchedule(tuple(steps), 16)


def test_exhaustive_readout_matches_oracle():
    d = np.arange(-511, 512) * R
    dec, raw, value, clipped, resid = read(d)
    for i, di in enumerate(d):
        signs, oraw, ores = sar_oracle(int(di), R)
        assert dec[i].tolist() == signs
        assert raw[i] == oraw and resid[i] == ores
    assert np.all(np.abs(raw - d / R) <= 1)
    assert np.all(np.abs(resid) <= R)
    assert np.all(np.abs(value - np.floor(d / R / 2)) <= 1)


def test_raw_always_odd():
    _, raw, _, _, _ = read(np.arange(-4000, 4000, 7))
    assert np.all(raw % 2 == 1)


def test_positive_200_example():
    _, raw, value, clipped, _ = read([200 * R])
    assert raw[0] == 199 and value[0] == 99 and not clipped[0]


def test_zero_differential():
    dec, raw, value, _, _ = read([0])
    # exact tie resolves to -1, the rest follow the positive residual
    assert dec[0].tolist() == [-1] + [1] * 8
    assert raw[0] == -1 and value[0] == -1


@pytest.mark.parametrize("d", [9000, -9000, 512 * R, -512 * R])
def test_saturation(d):
    dec, _, value, clipped, _ = read([d])
    assert abs(value[0]) == 255 and clipped[0]
    assert np.all(dec[0] == np.sign(d))


def test_sign_antisymmetry_off_ties():
    # away from ties and the +-255 clip rails
    d = np.array([x for x in range(-510 * R, 510 * R, 3) if x % R])
    _, _, v_pos, _, _ = read(d)
    _, _, v_neg, _, _ = read(-d)
    assert np.array_equal(v_neg, -v_pos - 1)


def test_reconstruct_and_code_to_mac():
    raw, value, clipped = reconstruct(np.ones(9, dtype=int))
    assert (raw, value, bool(clipped)) == (511, 255, True)
    assert code_to_mac(0, 16) == 16
    assert code_to_mac(-1, 16, 2) == -8


def test_single_row_example():
    w = np.zeros(64, dtype=int)
    a = np.zeros(64, dtype=int)
    w[0], a[0] = 7, 7
    d_rbl, d_rblb = mac_drops(a[None], w, 0.0, P)
    assert d_rbl[0] - d_rblb[0] == 49
    assert float(line_volts(d_rblb, P)[0] - line_volts(d_rbl, P)[0]) == pytest.approx(49 * P.u)


def test_no_pulses_for_zero_magnitude():
    d_rbl, d_rblb = mac_drops(np.zeros((1, 64), int), np.full(64, 7), 0.0, P,
                              NoiseParams(sigma_edge=1e-12), rng_for(0))
    assert d_rbl[0] == 0 and d_rblb[0] == 0


def test_weight_negation_swaps_lines():
    rng = np.random.default_rng(3)
    a = rng.integers(-8, 8, (20, 64))
    w = rng.integers(-7, 8, (20, 64))
    r1, b1 = mac_drops(a, w, 0.0, P)
    r2, b2 = mac_drops(a, -w, 0.0, P)
    assert np.array_equal(r1, b2) and np.array_equal(b1, r2)


def test_mixed_sign_rows_hit_both_lines():
    a = np.zeros(64, int)
    w = np.zeros(64, int)
    a[:2], w[:2] = [3, -3], [2, 2]
    r, b = mac_drops(a[None], w, 0.0, P)
    assert r[0] == 6 and b[0] == 6


def test_boost_doubles_drops():
    rng = np.random.default_rng(4)
    a = rng.integers(-8, 8, (10, 64))
    w = rng.integers(-7, 8, (10, 64))
    r1, b1 = mac_drops(a, w, 0.0, P)
    r2, b2 = mac_drops(a, w, 0.0, P.with_boost(2))
    assert np.array_equal(2 * r1, r2) and np.array_equal(2 * b1, b2)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-8, 7), min_size=64, max_size=64),
       st.lists(st.integers(-7, 7), min_size=64, max_size=64),
       st.randoms(use_true_random=False))
def test_permutation_invariance(a, w, rnd):
    idx = list(range(64))
    rnd.shuffle(idx)
    a, w = np.array(a), np.array(w)
    r1 = run_batch(a[None], w, SCHED, P)
    r2 = run_batch(a[idx][None], w[idx], SCHED, P)
    assert r1.value[0] == r2.value[0]
    assert r1.drop_rbl[0] == r2.drop_rbl[0]


def test_engine_lifecycle_errors():
    e = EngineState()
    with pytest.raises(NotPrecharged):
        e.mac_phase([0] * 64, P)
    with pytest.raises(WrongLength):
        e.load_weights([1] * 63, P)
    with pytest.raises(OutOfRange):
        e.load_weights([8] * 64, P)
    e.load_weights([1] * 64, P)
    with pytest.raises(ReadoutBeforeMac):
        e.adc_readout(SCHED, P)


@pytest.mark.parametrize("w,comp", [([0] * 64, 0), ([7] * 64, 3584), ([1, -1] * 32, 0)])
def test_load_weights_compensation(w, comp):
    e = EngineState().load_weights(w, P)
    assert e.compensation == comp and e.bl.precharged and e.bl.v_rbl == P.vdd


def test_mac_and_read_zero_activations():
    e = EngineState().load_weights(list(range(-7, 8)) * 4 + [3] * 4, P)
    acts = [encoding.fold_activation(8)] * 64
    e.mac_phase(acts, P)
    assert e.drop_rbl == e.drop_rblb == 0
    code = e.adc_readout(SCHED, P)
    corrected = code_to_mac(code.value, R) + e.compensation
    # a zero MAC sits on a code boundary; mid-rise reconstruction is -r away
    assert code.value == -1
    assert corrected == e.compensation - R


def test_mac_and_read_matches_dot_product():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a = rng.integers(0, 16, 64)
        w = rng.integers(-7, 8, 64)
        e = EngineState().load_weights(w.tolist(), P)
        code, corrected = e.mac_and_read([encoding.fold_activation(x) for x in a], SCHED, P)
        assert abs(corrected - int(a @ w)) <= R
        assert not code.clipped
        assert code.raw % 2 == 1


def test_batch_equals_engine_state():
    rng = np.random.default_rng(12)
    n = NoiseParams(sigma_edge=1e-12, k_narrow=1e-23, w_floor=2e-13, sigma_branch=0.01, sigma_sa=1e-4)
    a = rng.integers(0, 16, 64)
    w = rng.integers(-7, 8, 64)
    e = EngineState.sample(n, rng_for(1)).load_weights(w.tolist(), P)
    code, corrected = e.mac_and_read((a - 8).tolist(), SCHED, P, n, rng_for(2))
    e2 = EngineState.sample(n, rng_for(1))
    res = run_batch((a - 8)[None], w, SCHED, P, n, rng_for(2), mac_factors=e2.mac_branch_factors,
                    adc_factors=e2.adc_branch_factors, sa_offset=e2.sa_offset,
                    compensation=8 * w.sum())
    assert code.value == res.value[0]
    assert corrected == res.corrected[0]


def test_boost_halves_code_width():
    w = np.zeros(64, int)
    a = np.zeros(64, int)
    w[0], a[0] = 1, 5
    r1 = run_batch(a[None], w, SCHED, P)
    r2 = run_batch(a[None], w, SCHED, P.with_boost(2))
    assert abs(r2.corrected[0] - 5) <= abs(r1.corrected[0] - 5)
    assert code_to_mac(1, R, 2) - code_to_mac(0, R, 2) == (code_to_mac(1, R) - code_to_mac(0, R)) / 2
