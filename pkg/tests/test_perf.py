import math

import pytest
from hypothesis import given, strategies as st

from cimmacro import perf
from cimmacro.config import default_config
from cimmacro.errors import ValidationError
from cimmacro.macrosys import MacroConfig
from cimmacro.perf import (EnergyParams, energy_per_cycle, fom, gops_per_kb,
                           sparse_workload, sparsity_sweep, tops_per_watt)

CFG = default_config()
EP = CFG.energy
VDD = CFG.macro.analog.vdd


def trace(cfg, sparsity):
    w, applied = sparse_workload(cfg, sparsity)
    return perf._trace_from_applied(cfg, w, applied)


def test_energy_params_nonnegative():
    with pytest.raises(ValidationError):
        EnergyParams(e_sa=-1.0)


def test_sparse_trace_has_only_readout_and_overhead():
    dense, empty = trace(CFG.macro, 0.0), trace(CFG.macro, 1.0)
    assert empty.comparisons == dense.comparisons == 64 * 9
    assert empty.pulse_seconds < dense.pulse_seconds
    assert empty.recharge_volts < dense.recharge_volts
    readout_only = perf.embedded_readout_energy(CFG.macro, EP) * 64 + EP.e_digital * 64
    assert energy_per_cycle(empty, EP, VDD) == pytest.approx(readout_only, rel=1e-12)


def test_doubling_pulses_doubles_dtc_and_recharge():
    t = trace(CFG.macro, 0.3)
    no_fixed = EnergyParams(EP.e_precharge, EP.e_dtc, 0.0, 0.0)
    assert energy_per_cycle(t.scaled_pulses(2), no_fixed, VDD) == \
        pytest.approx(2 * energy_per_cycle(t, no_fixed, VDD), rel=1e-12)


def test_sparsity_reduces_energy():
    assert energy_per_cycle(trace(CFG.macro, 0.5), EP, VDD) < energy_per_cycle(trace(CFG.macro, 0.0), EP, VDD)


def test_energy_additive():
    a, b = trace(CFG.macro, 0.2), trace(CFG.macro, 0.7)
    assert energy_per_cycle(a + b, EP, VDD) == pytest.approx(
        energy_per_cycle(a, EP, VDD) + energy_per_cycle(b, EP, VDD), rel=1e-12)


def test_clock_invariance():
    t = trace(CFG.macro, 0.0)
    slow = MacroConfig(noise=CFG.macro.noise, clock_hz=100e6)
    assert tops_per_watt(t, EP, VDD) == tops_per_watt(trace(slow, 0.0), EP, VDD)
    assert gops_per_kb(slow) == pytest.approx(gops_per_kb(CFG.macro) / 2)


def test_throughput():
    # 64 engines x 64 rows x 2 ops per 12 clocks, over 16 Kb
    assert gops_per_kb(CFG.macro) == pytest.approx(64 * 64 * 2 * 200e6 / 12 / 16 / 1e9)


def test_sweep_monotone_and_fitted_band():
    rows = sparsity_sweep(CFG.macro, EP)
    eff = [r.tops_per_watt for r in rows]
    assert all(b >= a for a, b in zip(eff, eff[1:]))
    assert eff[0] == pytest.approx(95.6, rel=1e-9) and eff[-1] == pytest.approx(137.5, rel=1e-9)


def test_fit_energy_reproduces_defaults():
    ep = perf.fit_energy(CFG.macro)
    assert ep.e_dtc == pytest.approx(EP.e_dtc, rel=1e-9)
    assert ep.e_sa == pytest.approx(EP.e_sa, rel=1e-9)


def test_fom_examples():
    assert fom(4, 4, 1, 1, 1) == 16
    assert fom(8, 8, 0, 3.2, 99.0) == 0
    with pytest.raises(ValidationError):
        fom(4, 4, -1, 1, 1)


pos = st.floats(0.01, 1e3, allow_nan=False)


@given(pos, pos, pos, pos, pos, st.integers(0, 4))
def test_fom_monotone(a, w, o, t, e, i):
    args = [a, w, o, t, e]
    bumped = list(args)
    bumped[i] *= 1.5
    assert fom(*bumped) > fom(*args)


def test_sar_baseline_costs_more():
    per_conv = perf.sar_energy_per_conversion(512 * 2e-15, VDD)
    assert per_conv == pytest.approx(512 * 2e-15 * VDD ** 2)
    assert perf.embedded_readout_energy(CFG.macro, EP) < per_conv


def test_perf_report_consistent():
    rep = perf.perf_report(CFG.macro, EP, trace(CFG.macro, 0.0), 0.5)
    assert rep.fom_4b == pytest.approx(16 * 0.5 * rep.gops_per_kb / 1e3 * rep.tops_per_watt)
    assert rep.fom_8b == pytest.approx(rep.fom_4b * 4 / 36)
    assert rep.cycle_time == pytest.approx(12 / 200e6)
    assert all(math.isfinite(x) and x >= 0 for x in vars(rep).values())
