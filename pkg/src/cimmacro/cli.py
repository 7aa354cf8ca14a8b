"""Command-line front end: ``cimmacro <experiment> [options]``.

Every experiment writes summary.json (``"schema": 1``) and summary.txt
into ``--output-dir``, plus one CSV per table.  On failure a JSON error object is
printed to stderr (and written to error.json when possible) and the exit
status is nonzero.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import charz, encoding, perf
from .analog import rng_for
from .config import Config, apply_overrides, build, explain, to_values, _load
from .engine import ROWS
from .errors import CimError, NoWork, ParseError, RangeError, ValidationError
from .macrosys import CORES, ENGINES, ENGINES_PER_CORE, Macro, map_matrix, matmul

SCHEMA_VERSION = 1
EXPERIMENTS = ("simulate", "characterize", "montecarlo", "sweep", "map", "fom")

_COMMON = {
    "schema": "summary schema version (1)",
    "experiment": "experiment name",
    "seed": "master seed (noise.seed)",
    "config": "fully resolved config, same layout as the config file",
}

# Every key an experiment may emit in summary.json, with its meaning.
SUMMARY_SCHEMA: dict[str, dict[str, str]] = {
    "simulate": {
        "cycles": "macro cycles simulated",
        "outputs": "engine outputs produced",
        "rms_error": "RMS of corrected - exact dot product (MAC units)",
        "max_abs_error": "largest |corrected - exact| (MAC units)",
        "sigma_error": "std of (corrected - exact) / 6720",
        "clip_count": "outputs flagged clipped",
        "code_lsb": "readout code width in MAC units",
    },
    "characterize": {
        "trials": "trials per transfer-curve point",
        "sweep_min": "smallest swept MAC value",
        "sweep_max": "largest swept MAC value",
        "lsb": "endpoint-fit code width (MAC units)",
        "max_abs_dnl": "max |DNL| in LSB",
        "max_abs_inl": "max |INL| in LSB",
        "missing_codes": "codes with DNL = -1",
        "step_size": "MAC step in volts",
        "step_ratio": "folded / unfolded step size",
        "sigma_v": "analog MAC spread in volts",
        "margin": "step_size - 2 sigma_v",
        "headroom_utilization": "99th percentile |MAC| / readout full scale",
        "clip_fraction": "fraction of workload inputs beyond full scale",
    },
    "montecarlo": {
        "points": "Monte Carlo test points per mode",
        "sigma_baseline": "1-sigma error, folding off, boost off",
        "sigma_folding": "1-sigma error, folding on, boost off",
        "sigma_boost": "1-sigma error, folding off, boost on",
        "sigma_both": "1-sigma error, folding on, boost on",
        "reduction": "sigma_baseline / sigma_both",
        "quantization_floor_baseline": "uniform-quantiser 1-sigma error, baseline mode",
        "quantization_floor_both": "uniform-quantiser 1-sigma error, both enhancements",
        "conv_images": "images in the conv experiment (0 when skipped)",
        "conv_ratio_min": "min per-image noise-error ratio unfolded / folded",
        "conv_ratio_max": "max per-image ratio",
        "conv_ratio_mean": "mean per-image ratio",
        "conv_degenerate": "true when both arms are noiseless",
    },
    "sweep": {
        "tops_per_watt_min": "efficiency at the densest grid point",
        "tops_per_watt_max": "efficiency at the sparsest grid point",
        "monotone": "efficiency non-decreasing with sparsity",
        "gops_per_kb": "throughput per Kb of weights",
    },
    "map": {
        "rows": "matrix rows",
        "cols": "matrix columns",
        "vectors": "input vectors",
        "invocations": "macro invocations",
        "rms_error": "RMS of simulated - exact (MAC units)",
        "max_abs_error": "largest |simulated - exact|",
        "max_bound": "largest per-column ideal-mode error bound",
        "clip_count": "clipped engine outputs",
    },
    "fom": {
        "tops_per_watt": "modelled efficiency, dense workload",
        "gops_per_kb": "modelled throughput",
        "cycle_time": "seconds per macro cycle",
        "out_ratio": "OUT-ratio used",
        "fom_4b": "4b x 4b figure of merit",
        "fom_8b": "8b x 8b figure of merit (6-pass composition)",
        "fom_custom": "figure of merit of the explicit --act-bits ... inputs",
    },
}


class _Run:
    def __init__(self, cfg: Config, out: Path):
        self.cfg = cfg
        self.out = out
        self.files: dict[str, str] = {}

    def table(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        self.files[name] = buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


# ---------------------------------------------------------------- experiments

def _simulate(run: _Run, args) -> dict:
    cfg = run.cfg.macro
    seed = cfg.noise.seed
    macro = Macro(cfg)
    wrng, arng = rng_for(seed, 101), rng_for(seed, 102)
    rows, errs = [], []
    clips = 0
    for c in range(args.cycles):
        w = charz.uniform_weights(wrng, (ROWS, ENGINES))
        a = charz.relu_acts(arng, (CORES, ROWS), run.cfg.workload.act_scale)
        res = macro.run(w, a)
        exact = np.einsum("ej,je->e", a[np.arange(ENGINES) // ENGINES_PER_CORE], w)
        err = res.corrected - exact
        errs.append(err)
        clips += int(res.clipped.sum())
        for e in range(ENGINES):
            rows.append((c, e // ENGINES_PER_CORE, e, exact[e], res.corrected[e], res.codes[e],
                         res.clipped[e], err[e]))
    run.table("outputs.csv", ["cycle", "core", "engine", "exact", "corrected", "code", "clipped",
                              "error"], rows)
    err = np.concatenate(errs)
    return {"cycles": args.cycles, "outputs": len(err), "rms_error": float(np.sqrt(np.mean(err ** 2))),
            "max_abs_error": float(np.abs(err).max()), "sigma_error": float(np.std(err / charz.FULL_SCALE)),
            "clip_count": clips, "code_lsb": cfg.code_lsb}


def _sweep_range(cfg) -> np.ndarray:
    # stay a few rows inside the dynamic range so every target is realisable
    peak = encoding.FOLD_OFFSET if cfg.folding_enabled else encoding.ACT_MAX
    lim = encoding.dynamic_range(cfg.folding_enabled) - 2 * peak * encoding.W_MAG_MAX
    return np.arange(-lim, lim + 1)


def _characterize(run: _Run, args) -> dict:
    cfg = run.cfg.macro
    trials = args.trials or (1 if cfg.noise.ideal else run.cfg.workload.trials)
    sweep = _sweep_range(cfg)
    curve = charz.transfer_curve(cfg, sweep, trials, engine=args.engine)
    lin = charz.dnl_inl(curve)
    ideal = charz.ideal_code(sweep, cfg.r, cfg.analog.boost)
    run.table("transfer.csv", ["mac", "ideal_code", "mean_code", "std_code", "trials"],
              [(pt.ideal_mac, ic, pt.mean_code, pt.std_code, pt.n_trials) for pt, ic in zip(curve, ideal)])
    run.table("dnl.csv", ["code", "dnl"], zip(lin.codes, lin.dnl))
    run.table("inl.csv", ["code", "edge_mac", "inl"], zip(lin.edge_codes, lin.edges, lin.inl))
    mr = charz.signal_margin(cfg, act_scale=run.cfg.workload.act_scale)
    return {"trials": trials, "sweep_min": int(sweep[0]), "sweep_max": int(sweep[-1]), "lsb": lin.lsb,
            "max_abs_dnl": float(np.abs(lin.dnl).max()), "max_abs_inl": float(np.abs(lin.inl).max()),
            "missing_codes": len(lin.missing_codes), "step_size": mr.step_size, "step_ratio": charz.step_ratio(),
            "sigma_v": mr.sigma, "margin": mr.margin, "headroom_utilization": mr.headroom_utilization,
            "clip_fraction": mr.clip_fraction}


_MODES = (("baseline", False, False), ("folding", True, False), ("boost", False, True),
          ("both", True, True))


def _montecarlo(run: _Run, args) -> dict:
    cfg = run.cfg.macro
    points = args.points or run.cfg.workload.points
    scale = run.cfg.workload.act_scale
    out, rows = {"points": points}, []
    for name, fo, bo in _MODES:
        s = charz.sigma_error(cfg, points, folding=fo, boost=bo, act_scale=scale)
        q = charz.quantization_floor(cfg.with_modes(fo, bo))
        out[f"sigma_{name}"] = s.sigma
        rows.append((name, fo, bo, s.sigma, s.mean, s.rms, s.clipped, q))
        if name in ("baseline", "both"):
            out[f"quantization_floor_{name}"] = q
    out["reduction"] = out["sigma_baseline"] / out["sigma_both"] if out["sigma_both"] else None
    run.table("montecarlo.csv", ["mode", "folding", "boost", "sigma", "mean", "rms", "clipped",
                                 "quantization_floor"], rows)
    images = 0 if args.skip_conv else run.cfg.workload.images
    out["conv_images"] = images
    if images:
        ns = charz.noise_suppression_experiment(cfg, n_images=images, act_scale=scale,
                                                workers=args.workers)
        run.table("conv.csv", ["image", "rms_unfolded", "rms_folded", "ratio"],
                  zip(range(images), ns.rms_unfolded, ns.rms_folded, ns.ratios))
        out.update(conv_ratio_min=ns.min, conv_ratio_max=ns.max, conv_ratio_mean=ns.mean,
                   conv_degenerate=ns.degenerate)
    else:
        out.update(conv_ratio_min=None, conv_ratio_max=None, conv_ratio_mean=None, conv_degenerate=None)
    return out


def _sweep(run: _Run, args) -> dict:
    cfg, ep = run.cfg.macro, run.cfg.energy
    grid = [float(x) for x in args.grid.split(",")]
    rows = perf.sparsity_sweep(cfg, ep, grid, seed=cfg.noise.seed)
    run.table("sweep.csv", ["sparsity", "energy_j", "tops_per_watt"],
              [(r.sparsity, r.energy, r.tops_per_watt) for r in rows])
    eff = [r.tops_per_watt for r in rows]
    return {"tops_per_watt_min": eff[0], "tops_per_watt_max": eff[-1],
            "monotone": bool(np.all(np.diff(eff) >= 0)), "gops_per_kb": perf.gops_per_kb(cfg)}


def _fom(run: _Run, args) -> dict:
    cfg, ep = run.cfg.macro, run.cfg.energy
    w, applied = perf.sparse_workload(cfg, 0.0, cfg.noise.seed)
    trace = perf._trace_from_applied(cfg, w, applied)
    out_ratio = run.cfg.workload.out_ratio if args.out_ratio is None else args.out_ratio
    rep = perf.perf_report(cfg, ep, trace, out_ratio)
    thr = rep.gops_per_kb / 1e3 if args.throughput is None else args.throughput
    eff = rep.tops_per_watt if args.efficiency is None else args.efficiency
    custom = perf.fom(args.act_bits, args.w_bits, out_ratio, thr, eff)
    run.table("fom.csv", ["label", "act_bits", "w_bits", "out_ratio", "throughput_tops_per_kb",
                          "efficiency_tops_per_w", "fom"],
              [("4b", 4, 4, out_ratio, rep.gops_per_kb / 1e3, rep.tops_per_watt, rep.fom_4b),
               ("8b", 8, 8, out_ratio, rep.gops_per_kb / 6e3, rep.tops_per_watt / 6, rep.fom_8b),
               ("custom", args.act_bits, args.w_bits, out_ratio, thr, eff, custom)])
    return {"tops_per_watt": rep.tops_per_watt, "gops_per_kb": rep.gops_per_kb,
            "cycle_time": rep.cycle_time, "out_ratio": out_ratio, "fom_4b": rep.fom_4b,
            "fom_8b": rep.fom_8b, "fom_custom": custom}


def read_int_csv(path: Path, lo: int, hi: int, what: str) -> np.ndarray:
    """Rows of comma-separated integers in [lo, hi]; blank and '#' lines are skipped."""
    rows, width = [], None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            cells = [c.strip() for c in text.split(",")]
            try:
                vals = [int(c) for c in cells]
            except ValueError:
                raise RangeError(f"{what} row {lineno}: non-integer entry", row=lineno) from None
            if width is not None and len(vals) != width:
                raise RangeError(f"{what} row {lineno}: expected {width} entries, got {len(vals)}",
                                 row=lineno)
            bad = [v for v in vals if not lo <= v <= hi]
            if bad:
                raise RangeError(f"{what} row {lineno}: value {bad[0]} outside [{lo}, {hi}]", row=lineno)
            width = len(vals)
            rows.append(vals)
    if not rows:
        raise NoWork(f"{what} file {path} has no data rows")
    return np.array(rows, dtype=np.int64)


def _map(run: _Run, args) -> dict:
    cfg = run.cfg.macro
    m = read_int_csv(Path(args.matrix), -encoding.W_MAG_MAX, encoding.W_MAG_MAX, "matrix")
    if args.acts:
        acts = read_int_csv(Path(args.acts), 0, encoding.ACT_MAX, "acts")
        if acts.shape[1] != m.shape[0]:
            raise RangeError(f"acts rows must have {m.shape[0]} entries, got {acts.shape[1]}", row=1)
    else:
        acts = charz.relu_acts(rng_for(cfg.noise.seed, 103), (args.vectors, m.shape[0]),
                               run.cfg.workload.act_scale)
    macro = Macro(cfg)
    res = matmul(macro, m, acts, placement=map_matrix(m))
    exact = acts @ m
    err = res.outputs - exact
    run.table("map.csv", ["vector", "column", "exact", "simulated", "error", "clips", "bound"],
              [(i, j, exact[i, j], res.outputs[i, j], err[i, j], res.clip_counts[i, j], res.bound[j])
               for i in range(len(acts)) for j in range(m.shape[1])])
    return {"rows": m.shape[0], "cols": m.shape[1], "vectors": len(acts),
            "invocations": res.invocations, "rms_error": float(np.sqrt(np.mean(err ** 2))),
            "max_abs_error": float(np.abs(err).max()), "max_bound": float(res.bound.max()),
            "clip_count": int(res.clip_counts.sum())}


_RUNNERS = {"simulate": _simulate, "characterize": _characterize, "montecarlo": _montecarlo,
            "sweep": _sweep, "map": _map, "fom": _fom}


# ---------------------------------------------------------------- plumbing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (missing keys take defaults)")
    common.add_argument("--output-dir", default="out", help="directory for emitted files")
    common.add_argument("--seed", type=int, help="master seed (overrides noise.seed)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--explain-config", action="store_true",
                        help="print every config key with its provenance and exit")
    p = argparse.ArgumentParser(prog="cimmacro", description="SRAM compute-in-memory macro simulator")
    sub = p.add_subparsers(dest="experiment", required=True)
    s = sub.add_parser("simulate", parents=[common], help="random macro cycles")
    s.add_argument("--cycles", type=int, default=4)
    s = sub.add_parser("characterize", parents=[common], help="transfer curve, DNL/INL, signal margin")
    s.add_argument("--trials", type=int, default=0, help="trials per point (0 = 1 if ideal else workload.trials)")
    s.add_argument("--engine", type=int, default=0)
    s = sub.add_parser("montecarlo", parents=[common], help="1-sigma error and conv noise suppression")
    s.add_argument("--points", type=int, default=0, help="test points (0 = workload.points)")
    s.add_argument("--skip-conv", action="store_true")
    s = sub.add_parser("sweep", parents=[common], help="energy efficiency versus input sparsity")
    s.add_argument("--grid", default="0,0.25,0.5,0.75,1")
    s = sub.add_parser("map", parents=[common], help="tile a weight matrix and run input vectors")
    s.add_argument("--matrix", required=True, help="CSV, one line per matrix row, weights in [-7, 7]")
    s.add_argument("--acts", help="CSV, one input vector per line, activations in [0, 15]")
    s.add_argument("--vectors", type=int, default=1, help="random input vectors when --acts is absent")
    s = sub.add_parser("fom", parents=[common], help="figure of merit from modelled throughput and efficiency")
    s.add_argument("--act-bits", type=float, default=4)
    s.add_argument("--w-bits", type=float, default=4)
    s.add_argument("--out-ratio", type=float)
    s.add_argument("--throughput", type=float, help="TOPS/Kb (default: model)")
    s.add_argument("--efficiency", type=float, help="TOPS/W (default: model)")
    return p


def resolve_config(args) -> Config:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc.strerror}") from None
    values = apply_overrides(_load(text), args.overrides)
    if args.seed is not None:
        values.setdefault("noise", {})["seed"] = args.seed
    return build(values)


def _error_payload(exc: BaseException) -> dict:
    err = {"type": type(exc).__name__, "message": str(exc)}
    for attr in ("line", "column", "row"):
        if getattr(exc, attr, None) is not None:
            err[attr] = getattr(exc, attr)
    return {"schema": SCHEMA_VERSION, "error": err}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ParseError, ValidationError)):
        return 2
    if isinstance(exc, CimError):
        return 3
    return 1


def run_experiment(args) -> dict:
    cfg = resolve_config(args)
    out = Path(args.output_dir)
    run = _Run(cfg, out)
    metrics = _RUNNERS[args.experiment](run, args)
    unknown = set(metrics) - set(SUMMARY_SCHEMA[args.experiment])
    if unknown:
        raise AssertionError(f"undocumented summary keys: {sorted(unknown)}")
    summary = {"schema": SCHEMA_VERSION, "experiment": args.experiment, "seed": cfg.noise.seed,
               "config": to_values(cfg), **metrics}
    summary = _jsonable(summary)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in run.files.items():
        (out / name).write_text(text)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    lines = [f"experiment: {args.experiment}", f"seed: {cfg.noise.seed}"]
    lines += [f"{k}: {summary[k]}" for k in metrics]
    lines += [f"table: {name}" for name in sorted(run.files)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return summary


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.explain_config:
            sys.stdout.write(explain(resolve_config(args)))
            return 0
        run_experiment(args)
    except Exception as exc:  # reported as JSON, never as a traceback
        payload = json.dumps(_error_payload(exc), sort_keys=True)
        sys.stderr.write(payload + "\n")
        try:
            out = Path(args.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(payload + "\n")
        except OSError:
            pass
        return _exit_code(exc)
    sys.stdout.write((Path(args.output_dir) / "summary.txt").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
