"""Config file schema (TOML, flat sections) with defaults and provenance.

Sections: [analog] [noise] [schedule] [energy] [modes] [workload].
Every key has a default; ``explain()`` lists each default with where it
comes from (published design value, fitted, derived or plumbing).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import tomli

from .analog import AnalogParams, NoiseParams
from .engine import ReadoutSchedule
from .errors import CimError, ParseError, ValidationError
from .macrosys import MacroConfig
from .perf import EnergyParams

# (section, key) -> (default, provenance, note)
SCHEMA: dict[tuple[str, str], tuple[object, str, str]] = {
    ("analog", "vdd"): (1.1, "plumbing", "supply / precharge level, V"),
    ("analog", "vpp_mac"): (0.5, "plumbing", "usable bit-line headroom, V"),
    ("analog", "c_bl"): (150e-15, "plumbing", "bit-line capacitance, F"),
    ("analog", "i0"): (1.2e-6, "plumbing", "branch current, A"),
    ("analog", "tau"): (2e-12, "plumbing", "DTC quantum, s; u = i0*tau/c_bl = 16 uV"),
    ("analog", "lambda_clm"): (0.0, "plumbing", "channel-length modulation, 1/V"),
    ("noise", "sigma_edge"): (1.5e-12, "fitted", "width-independent pulse jitter, s (0.75 tau)"),
    ("noise", "k_narrow"): (9.965689565952403e-23, "fitted", "narrow-pulse jitter scale, s^2; calibrated to 1.3% baseline"),
    ("noise", "w_floor"): (0.2e-12, "fitted", "jitter regulariser, s (0.1 tau)"),
    ("noise", "sigma_branch"): (0.002, "fitted", "per-cell current mismatch, relative"),
    ("noise", "sigma_sa"): (8e-5, "fitted", "comparator offset std, V (5 u)"),
    ("noise", "seed"): (1, "plumbing", "master seed for chip mismatch and noise streams"),
    ("schedule", "r"): ("auto", "derived", "ADC step in MAC quanta; auto = 15 unfolded, 8 folded"),
    ("schedule", "max_branches"): (2, "derived", "readout branches per step (auto schedule)"),
    ("schedule", "min_quanta"): (64, "derived", "shortest readout pulse in quanta (auto schedule)"),
    ("schedule", "steps"): ([], "plumbing", "explicit [[n, q], ...] x 9; overrides the auto schedule"),
    ("energy", "e_precharge"): (EnergyParams.e_precharge, "derived", "C_bl * vdd^2 per full-swing line precharge, J"),
    ("energy", "e_dtc"): (EnergyParams.e_dtc, "fitted", "DTC energy per second of pulse, J/s"),
    ("energy", "e_sa"): (EnergyParams.e_sa, "fitted", "energy per comparison, J"),
    ("energy", "e_digital"): (EnergyParams.e_digital, "fitted", "energy per digital output, J"),
    ("modes", "folding"): (True, "published", "MAC-folding (subtract 8 from activations)"),
    ("modes", "boost"): (1, "published", "MAC pulse resolution multiplier; 2 = boosted-clipping"),
    ("modes", "dtc_shared"): (True, "plumbing", "one DTC noise realisation per core and cycle"),
    ("modes", "clock_hz"): (200e6, "published", "clock, 100-200 MHz"),
    ("workload", "act_scale"): (1.25, "fitted", "half-normal scale of ReLU-like activations"),
    ("workload", "points"): (9000, "published", "Monte Carlo test points"),
    ("workload", "trials"): (8, "plumbing", "trials per transfer-curve point when noisy"),
    ("workload", "images"): (10, "published", "random images for the conv experiment"),
    ("workload", "out_ratio"): (9 / 14, "derived", "readout bits / full 64-row 4b x 4b output bits"),
}

SECTIONS = ("analog", "noise", "schedule", "energy", "modes", "workload")


@dataclass(frozen=True)
class Workload:
    act_scale: float = 1.25
    points: int = 9000
    trials: int = 8
    images: int = 10
    out_ratio: float = 9 / 14

    def __post_init__(self):
        if self.act_scale <= 0:
            raise ValidationError("workload.act_scale must be > 0")
        for name in ("points", "trials", "images"):
            if getattr(self, name) < 1:
                raise ValidationError(f"workload.{name} must be >= 1")
        if self.out_ratio < 0:
            raise ValidationError("workload.out_ratio must be >= 0")


@dataclass(frozen=True)
class Config:
    macro: MacroConfig
    energy: EnergyParams = field(default_factory=EnergyParams)
    workload: Workload = field(default_factory=Workload)

    @property
    def noise(self) -> NoiseParams:
        return self.macro.noise


def _defaults() -> dict[str, dict]:
    out: dict[str, dict] = {s: {} for s in SECTIONS}
    for (sec, key), (val, _, _) in SCHEMA.items():
        out[sec][key] = list(val) if isinstance(val, list) else val
    return out


_LOC = re.compile(r"line (\d+), column (\d+)")


def _load(text: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = _LOC.search(str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ParseError(f"config parse error: {exc}", line, col) from None


def _type_check(sec: str, key: str, value, default):
    if (sec, key) == ("modes", "boost"):
        if isinstance(value, bool):
            value = 2 if value else 1
        if value not in (1, 2) or isinstance(value, float):
            raise ValidationError(f"modes.boost = {value!r} violates boost \u2208 {{1,2}}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{sec}.{key} must be true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{sec}.{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{sec}.{key} must be a number")
        return float(value)
    return value


def build(values: dict[str, dict]) -> Config:
    """Validated Config from a {section: {key: value}} mapping (missing keys default)."""
    merged = _defaults()
    for sec, table in values.items():
        if sec not in merged:
            raise ValidationError(f"unknown section [{sec}]")
        if not isinstance(table, dict):
            raise ValidationError(f"[{sec}] must be a table")
        for key, val in table.items():
            if (sec, key) not in SCHEMA:
                raise ValidationError(f"unknown key {sec}.{key}")
            merged[sec][key] = _type_check(sec, key, val, SCHEMA[(sec, key)][0])
    a, n, s, e, m, w = (merged[x] for x in SECTIONS)
    try:
        boost = m["boost"] == 2
        analog = AnalogParams(a["vdd"], a["vpp_mac"], a["c_bl"], a["i0"], a["tau"],
                              a["lambda_clm"], m["boost"])
        noise = NoiseParams(n["sigma_edge"], n["k_narrow"], n["w_floor"], n["sigma_branch"],
                            n["sigma_sa"], n["seed"])
        schedule = _schedule(s)
        macro = MacroConfig(analog=analog, noise=noise, schedule=schedule,
                            folding_enabled=m["folding"], boost_enabled=boost,
                            clock_hz=m["clock_hz"], max_branches=s["max_branches"],
                            min_quanta=s["min_quanta"], dtc_shared=m["dtc_shared"])
        energy = EnergyParams(e["e_precharge"], e["e_dtc"], e["e_sa"], e["e_digital"])
        workload = Workload(w["act_scale"], w["points"], w["trials"], w["images"], w["out_ratio"])
    except ValidationError:
        raise
    except CimError as exc:
        raise ValidationError(str(exc)) from None
    _check_headroom(macro)
    return Config(macro, energy, workload)


def _schedule(s: dict) -> ReadoutSchedule | None:
    r = s["r"]
    steps = s["steps"]
    if r == "auto":
        if steps:
            raise ValidationError("schedule.steps requires an explicit integer schedule.r")
        return None
    if isinstance(r, bool) or not isinstance(r, int):
        raise ValidationError('schedule.r must be "auto" or an integer >= 1')
    if not steps:
        return ReadoutSchedule.build(r, s["max_branches"], s["min_quanta"])
    try:
        pairs = tuple((int(n), int(q)) for n, q in steps)
    except (TypeError, ValueError):
        raise ValidationError("schedule.steps must be a list of [n_branches, pulse_quanta] pairs") from None
    return ReadoutSchedule(pairs, r)


def _check_headroom(macro: MacroConfig) -> None:
    """Worst-case single-line discharge (MAC + full readout) must fit vpp_mac."""
    from . import encoding

    p = macro.analog
    worst = (encoding.dynamic_range(macro.folding_enabled) * p.boost
             + int(macro.readout.amounts.sum())) * p.u
    if worst > p.vpp_mac:
        raise ValidationError(
            f"headroom: worst-case discharge {worst:.3f} V exceeds vpp_mac = {p.vpp_mac} V")


def parse_config(text: str) -> Config:
    return build(_load(text))


def apply_overrides(values: dict[str, dict], overrides) -> dict[str, dict]:
    """Apply ``section.key=value`` strings (values parsed as TOML literals)."""
    out = {k: dict(v) for k, v in values.items()}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"override {item!r} is not section.key=value")
        lhs, rhs = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        try:
            val = tomli.loads(f"v = {rhs.strip()}")["v"]
        except tomli.TOMLDecodeError:
            val = rhs.strip()
        out.setdefault(sec, {})[key] = val
    return out


def load_config(text: str = "", overrides=()) -> Config:
    return build(apply_overrides(_load(text), overrides))


def to_values(cfg: Config) -> dict[str, dict]:
    m, a, n, e, w = cfg.macro, cfg.macro.analog, cfg.macro.noise, cfg.energy, cfg.workload
    sched = m.schedule
    return {
        "analog": {"vdd": a.vdd, "vpp_mac": a.vpp_mac, "c_bl": a.c_bl, "i0": a.i0, "tau": a.tau,
                   "lambda_clm": a.lambda_clm},
        "noise": {"sigma_edge": n.sigma_edge, "k_narrow": n.k_narrow, "w_floor": n.w_floor,
                  "sigma_branch": n.sigma_branch, "sigma_sa": n.sigma_sa, "seed": n.seed},
        "schedule": {"r": "auto" if sched is None else sched.r, "max_branches": m.max_branches,
                     "min_quanta": m.min_quanta,
                     "steps": [] if sched is None else [list(st) for st in sched.steps]},
        "energy": {"e_precharge": e.e_precharge, "e_dtc": e.e_dtc, "e_sa": e.e_sa,
                   "e_digital": e.e_digital},
        "modes": {"folding": m.folding_enabled, "boost": a.boost,
                  "dtc_shared": m.dtc_shared, "clock_hz": m.clock_hz},
        "workload": {"act_scale": w.act_scale, "points": w.points, "trials": w.trials,
                     "images": w.images, "out_ratio": w.out_ratio},
    }


def _literal(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_literal(x) for x in v) + "]"
    raise TypeError(f"cannot emit {type(v).__name__}")


def emit_config(cfg: Config) -> str:
    lines = []
    for sec, table in to_values(cfg).items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_literal(v)}" for k, v in table.items())
        lines.append("")
    return "\n".join(lines)


def explain(cfg: Config | None = None) -> str:
    """One line per key: value, default, provenance and meaning."""
    values = to_values(cfg if cfg is not None else parse_config(""))
    out = []
    for (sec, key), (default, prov, note) in SCHEMA.items():
        out.append(f"{sec}.{key} = {_literal(values[sec][key])}  "
                   f"[default {_literal(default)}; {prov}] {note}")
    return "\n".join(out) + "\n"


DEFAULT = None


def default_config() -> Config:
    global DEFAULT
    if DEFAULT is None:
        DEFAULT = parse_config("")
    return DEFAULT
