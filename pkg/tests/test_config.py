import pytest
from hypothesis import assume, given, settings, strategies as st

from cimmacro.config import (SCHEMA, SECTIONS, apply_overrides, build, emit_config, explain,
                             load_config, parse_config, to_values)
from cimmacro.errors import ParseError, ValidationError


def test_empty_file_defaults():
    cfg = parse_config("")
    assert cfg.macro.folding_enabled and not cfg.macro.boost_enabled
    assert cfg.macro.noise.k_narrow > 0
    assert cfg.macro.readout.r == 8
    assert cfg.workload.points == 9000


def test_every_default_has_provenance():
    text = explain()
    for (sec, key), (_, prov, _) in SCHEMA.items():
        assert prov in {"published", "fitted", "derived", "plumbing"}
        assert f"{sec}.{key} = " in text
    assert len(text.splitlines()) == len(SCHEMA)


def test_boost_invariant():
    with pytest.raises(ValidationError, match=r"boost ∈ \{1,2\}"):
        parse_config("[modes]\nboost = 3\n")
    assert parse_config("[modes]\nboost = 2\n").macro.boost_enabled


def test_schedule_step_named():
    steps = "[[64, 64], [64, 32], [64, 16], [64, 8], [64, 4], [64, 2], [64, 1], [32, 1], [16, 2]]"
    with pytest.raises(ValidationError, match="step 9"):
        parse_config(f"[schedule]\nr = 16\nsteps = {steps}\n")


def test_explicit_schedule():
    steps = "[[64, 64], [64, 32], [64, 16], [64, 8], [64, 4], [64, 2], [64, 1], [32, 1], [16, 1]]"
    cfg = parse_config(f"[schedule]\nr = 16\nsteps = {steps}\n")
    assert cfg.macro.r == 16 and cfg.macro.readout.steps[-1] == (16, 1)


def test_parse_error_location():
    with pytest.raises(ParseError) as exc:
        parse_config("[analog]\nvdd = = 1\n")
    assert exc.value.line == 2 and exc.value.column is not None


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[analog]\nvddd = 1.0\n",
                                  "[analog]\nvdd = \"high\"\n", "[noise]\nseed = 1.5\n",
                                  "[analog]\nvdd = -1.0\n", "[modes]\nclock_hz = 1e9\n",
                                  "[analog]\nvpp_mac = 0.01\n"])
def test_validation_errors(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_overrides():
    cfg = load_config("", ["modes.folding=false", "noise.seed=7", "schedule.r=12"])
    assert not cfg.macro.folding_enabled and cfg.noise.seed == 7 and cfg.macro.r == 12
    with pytest.raises(ValidationError):
        apply_overrides({}, ["nodot=1"])


def test_default_round_trip():
    cfg = parse_config("")
    assert parse_config(emit_config(cfg)) == cfg
    assert emit_config(parse_config(emit_config(cfg))) == emit_config(cfg)


pos = st.floats(1e-3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def configs(draw):
    vals = {
        "analog": {"vdd": draw(st.floats(1.0, 1.5)), "vpp_mac": draw(st.floats(0.3, 0.9)),
                   "lambda_clm": draw(st.floats(0, 0.5)), "c_bl": draw(st.floats(100e-15, 400e-15))},
        "noise": {"sigma_edge": draw(st.floats(0, 5e-12)), "k_narrow": draw(st.floats(0, 1e-22)),
                  "w_floor": draw(st.floats(1e-14, 1e-12)), "sigma_branch": draw(st.floats(0, 0.05)),
                  "sigma_sa": draw(st.floats(0, 1e-3)), "seed": draw(st.integers(0, 2 ** 31))},
        "modes": {"folding": draw(st.booleans()), "boost": draw(st.sampled_from([1, 2])),
                  "dtc_shared": draw(st.booleans()), "clock_hz": draw(st.floats(100e6, 200e6))},
        "energy": {"e_sa": draw(st.floats(0, 1e-12))},
        "workload": {"act_scale": draw(pos), "points": draw(st.integers(1, 10 ** 5))},
    }
    if draw(st.booleans()):
        vals["schedule"] = {"r": draw(st.integers(1, 16)), "max_branches": draw(st.integers(1, 64)),
                            "min_quanta": draw(st.integers(1, 64))}
    try:
        return build(vals)
    except ValidationError:
        # e.g. a headroom too small for the drawn schedule
        assume(False)


@settings(max_examples=60, deadline=None)
@given(configs())
def test_round_trip_property(cfg):
    assert parse_config(emit_config(cfg)) == cfg
    assert set(to_values(cfg)) == set(SECTIONS)
