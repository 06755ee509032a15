"""Command line entry point: ``bfda run|sweep|verify|bounds``.

Exit codes: 0 success, 2 configuration or validation error, 3 blow-up,
4 property failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import assimilation as asm
from . import bounds as bd
from . import properties
from . import spectral as sp
from .config import ConfigError, ExperimentConfig, parse_config, parse_override, sweep_points
from .dynamics import Forcing
from .timestepper import BlowUpError

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_PROPERTY = 0, 2, 3, 4

SYNC_THRESHOLD = 1e-8

SUMMARY_COLUMNS = ("point", "beta", "b_tilde", "eta", "h", "delta_alpha", "delta_a",
                   "decay_rate", "decaying", "plateau_l2", "plateau_h1", "hyp_thm31",
                   "hyp_thm32", "apriori_holds", "status", "wall_time")


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _preamble(meta):
    return "".join(f"# {k} = {v}\n" for k, v in sorted(meta.items()))


# -- shared pieces ------------------------------------------------------------

def _truth_start(cfg: ExperimentConfig):
    """Spin-up from the configured seed; returns (SpinUp, Forcing)."""
    grid = cfg.grid()
    p = cfg.physical()
    forcing = Forcing(grid, cfg.forcing())
    s = asm.spin_up(p, forcing, grid, cfg["run.seed"], cfg["run.T_spin"], cfg.spin_stepper(),
                    ic_amplitude=cfg["run.ic_amplitude"], record=True,
                    sample_stride=cfg["run.sample_stride"], eta=cfg["assim.eta"])
    return s, forcing


def _resolve_M(cfg, *fields):
    need = max(asm.estimate_M(f) for f in fields)
    M = cfg["bounds.M"]
    if M is None:
        return need
    if M < need:
        raise ConfigError(f"bounds.M={M} is below the measured requirement {need!r}")
    return M


def _bounds_cfg(cfg, forcing, beta):
    bc = cfg.bounds()
    if 1 < beta < 2 or bc.kappa is not None:
        return bc.resolve(beta, forcing)
    return bc.resolve(None, forcing)


def _coupled_point(cfg: ExperimentConfig, u0_coeffs, spin_rec, M, over):
    """One coupled run plus its fit and verdicts; used by run and sweep."""
    grid = cfg.grid()
    p = cfg.physical()
    q = cfg.assim(**over)
    forcing = Forcing(grid, cfg.forcing())
    u0 = sp.SpectralField(grid, u0_coeffs)
    w0 = u0.copy() if cfg["run.w0"] == "truth" else None
    t0 = time.perf_counter()
    state, rec = asm.run_coupled(p, q, forcing, u0, w0, cfg["run.T"], cfg.stepper(),
                                 cfg["run.sample_stride"], M=M)
    rec.meta.update(cfg.meta())
    if len(rec) >= 10:
        fit = asm.fit_decay_and_plateau(rec)
        fit_h1 = asm.fit_decay_and_plateau(rec["t"], rec["g_h1"])
    else:
        fit = fit_h1 = None
    bcfg = _bounds_cfg(cfg, forcing, q.beta)
    report = bd.evaluate(p, q, bcfg, M)
    truth = rec
    if spin_rec is not None and len(spin_rec):
        shifted = asm.RunRecord(rec.columns, rec.data.copy(), rec.meta)
        shifted.data[:, 0] += spin_rec["t"][-1]
        spin = asm.RunRecord(spin_rec.columns, spin_rec.data, dict(spin_rec.meta))
        spin.meta["run.eta"] = repr(float(q.eta))
        if float(spin_rec.meta.get("run.eta", q.eta)) != q.eta:
            # weighted integral of the spin-up was accumulated with another eta
            spin = asm.RunRecord(tuple(c for c in spin.columns if c != "weighted_int_A"),
                                 np.column_stack([spin[c] for c in spin.columns
                                                  if c != "weighted_int_A"]), spin.meta)
        truth = asm.RunRecord.concat(spin, shifted)
    bd.verify_apriori(truth, report, p, q.eta if q.eta > 0 else None)
    return {"q": q, "state": state, "record": rec, "truth": truth, "fit": fit,
            "fit_h1": fit_h1, "report": report, "wall": time.perf_counter() - t0}


def _summary_text(cfg, res):
    rec, fit, rep = res["record"], res["fit"], res["report"]
    g0 = float(rec["g_l2"][0])
    lines = [f"samples = {len(rec)}", f"g_l2_initial = {g0!r}",
             f"g_l2_final = {float(rec['g_l2'][-1])!r}"]
    if fit is None:
        lines.append("fit = insufficient samples")
    else:
        sync = fit.plateau_norm <= SYNC_THRESHOLD * g0
        lines += [f"decaying = {fit.decaying}", f"decay_rate = {fit.rate!r}",
                  f"reference_rate_eta_over_8 = {res['q'].eta / 8!r}",
                  f"plateau_l2 = {fit.plateau_norm!r}",
                  f"plateau_h1 = {float(res['fit_h1'].plateau)!r}",
                  f"synchronized = {sync}"]
    for k in ("thm31", "thm32", "thm33"):
        if k in rep.hypotheses:
            lines.append(f"hypotheses.{k} = {rep.hypotheses[k]}")
    lines.append(f"apriori_all_hold = {rep.all_hold}")
    for v in rep.verdicts:
        lines.append(f"apriori.{v.name} = {v.status} ratio={v.ratio!r}")
    return "".join(f"{l}\n" for l in lines)


# -- subcommands --------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig, out: Path, log=print) -> int:
    spin, forcing = _truth_start(cfg)
    w0 = spin.u if cfg["run.w0"] == "truth" else sp.SpectralField.zeros(spin.u.grid)
    M = _resolve_M(cfg, spin.u0, spin.u, w0)
    res = _coupled_point(cfg, spin.u.coeffs, spin.record, M, {})
    meta = cfg.meta()
    res["record"].to_csv(out / "run.csv")
    res["truth"].meta.update(meta)
    res["truth"].to_csv(out / "truth.csv")
    rep = res["report"]
    _write(out / "bounds.txt", _preamble(meta) + rep.to_kv())
    _write(out / "bounds.csv", _preamble(meta) + rep.to_csv())
    _write(out / "apriori.csv", _preamble(meta) + rep.verdicts_csv())
    summary = _summary_text(cfg, res)
    _write(out / "summary.txt", _preamble(meta) + summary)
    log(summary.rstrip())
    return EXIT_OK


def _sweep_worker(args):
    text, u0_coeffs, spin_rec, M, over, index, threads = args
    sp.set_fft_workers(threads)
    from .config import parse_text
    cfg = parse_text(text)
    t0 = time.perf_counter()
    try:
        res = _coupled_point(cfg, u0_coeffs, spin_rec, M, over)
    except BlowUpError as exc:
        return index, over, None, f"blowup: {exc}", time.perf_counter() - t0
    except (ValueError, ArithmeticError) as exc:
        return index, over, None, f"error: {exc}", time.perf_counter() - t0
    slim = {"record_csv": res["record"].to_csv(), "fit": res["fit"], "fit_h1": res["fit_h1"],
            "hyp": {k: res["report"].hypotheses.get(k) for k in ("thm31", "thm32")},
            "apriori": res["report"].all_hold, "q": res["q"]}
    return index, over, slim, "ok", time.perf_counter() - t0


def loglog_regression(x, y):
    """Least-squares slope and intercept of log y against log x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan, math.nan, int(keep.sum())
    slope, icpt = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(icpt), int(keep.sum())


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1, log=print) -> int:
    points = sweep_points(cfg)
    spin, forcing = _truth_start(cfg)
    p = cfg.physical()
    M = _resolve_M(cfg, spin.u0, spin.u)
    text = cfg.to_text()
    jobs = [(text, spin.u.coeffs, spin.record, M, pt, i, 1 if threads > 1 else threads)
            for i, pt in enumerate(points)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    meta = cfg.meta()
    rows = []
    for index, over, slim, status, wall in results:
        q = cfg.assim(**over)
        row = {"point": index, "beta": q.beta, "b_tilde": q.b_tilde, "eta": q.eta,
               "h": q.interpolant.h, "delta_alpha": abs(p.alpha - q.beta),
               "delta_a": abs(p.a_tilde - q.b_tilde), "status": status, "wall_time": wall}
        if slim is not None:
            _write(out / f"point_{index:03d}.csv", slim["record_csv"])
            fit, fit_h1 = slim["fit"], slim["fit_h1"]
            row.update(decay_rate=fit.rate if fit else math.nan,
                       decaying=fit.decaying if fit else False,
                       plateau_l2=fit.plateau_norm if fit else math.nan,
                       plateau_h1=fit_h1.plateau if fit_h1 else math.nan,
                       hyp_thm31=slim["hyp"]["thm31"], hyp_thm32=slim["hyp"]["thm32"],
                       apriori_holds=slim["apriori"])
        rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_cell(r.get(c, math.nan)) for c in SUMMARY_COLUMNS])
    _write(out / "sweep_summary.csv", _preamble(meta) + buf.getvalue())

    reg = regressions(rows, cfg.sweep_axes())
    if reg:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis", "group", "slope", "intercept", "points"])
        for r in reg:
            w.writerow([r[0], r[1], _cell(r[2]), _cell(r[3]), r[4]])
        _write(out / "regression.csv", _preamble(meta) + buf.getvalue())
        for r in reg:
            log(f"log-log slope of plateau_l2 vs {r[0]} mismatch [{r[1]}]: {r[2]:.4f} "
                f"over {r[4]} points")
    failed = [r for r in rows if r["status"] != "ok"]
    log(f"{len(rows)} sweep points, {len(failed)} failed")
    return EXIT_OK


def _cell(v):
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def regressions(rows, axes):
    """Plateau against |mismatch| for each swept mismatch axis, grouped by the
    values of the other axes."""
    out = []
    for axis, delta in (("beta", "delta_alpha"), ("b_tilde", "delta_a")):
        if axis not in axes or len(axes[axis]) < 2:
            continue
        others = [a for a in axes if a != axis]
        groups = {}
        for r in rows:
            if r["status"] != "ok":
                continue
            key = ", ".join(f"{o}={r[o]!r}" for o in others) or "all"
            groups.setdefault(key, []).append(r)
        for key, rs in sorted(groups.items()):
            slope, icpt, n = loglog_regression([r[delta] for r in rs],
                                               [r["plateau_l2"] for r in rs])
            out.append((axis, key, slope, icpt, n))
    return out


def cmd_verify(n: int = 16, fault=None, log=print) -> int:
    with properties.injected_fault(fault):
        results = properties.run_suite(n, log=log)
    failed = [r.name for r in results if not r.ok]
    if failed:
        log(f"FAIL: {', '.join(failed)}")
        return EXIT_PROPERTY
    log("PASS: all properties hold")
    return EXIT_OK


def cmd_bounds(cfg: ExperimentConfig, out: Path, log=print) -> int:
    grid = cfg.grid()
    p = cfg.physical()
    q = cfg.assim()
    forcing = Forcing(grid, cfg.forcing())
    M = cfg["bounds.M"]
    if M is None:
        # no simulation: the admissible M of the configured initial data
        M = asm.estimate_M(asm.initial_condition(grid, cfg["run.seed"], cfg["run.ic_amplitude"]))
    rep = bd.evaluate(p, q, _bounds_cfg(cfg, forcing, q.beta), M)
    meta = cfg.meta()
    text = rep.to_kv()
    _write(out / "bounds.txt", _preamble(meta) + text)
    _write(out / "bounds.csv", _preamble(meta) + rep.to_csv())
    log(text.rstrip())
    return EXIT_OK


# -- argument handling --------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="FFT threads / sweep workers (default 1)")
    common.add_argument("--output", default=argparse.SUPPRESS,
                        help="output directory (overrides run.output)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="initial-condition seed (overrides run.seed)")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS,
                        metavar="KEY=VALUE", help="override one config key; may be repeated")
    ap = argparse.ArgumentParser(prog="bfda", description=__doc__.splitlines()[0],
                                 parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "bounds"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("config")
    v = sub.add_parser("verify", parents=[common])
    v.add_argument("--n", type=int, default=16,
                   help="grid size for the property suite (default 16)")
    v.add_argument("--inject-fault", choices=sorted(properties.FAULTS), default=None,
                   help=argparse.SUPPRESS)
    return ap


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    over = {}
    for item in args.set:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        over[k.strip()] = parse_override(k.strip(), v)
    if args.seed is not None:
        over["run.seed"] = args.seed
    if args.output is not None:
        over["run.output"] = args.output
    return cfg.override(over) if over else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("threads", 1), ("output", None), ("seed", None), ("set", [])):
        if not hasattr(args, name):
            setattr(args, name, default)
    threads = max(1, args.threads)
    sp.set_fft_workers(threads)
    try:
        if args.command == "verify":
            return cmd_verify(args.n, args.inject_fault)
        cfg = _load(args)
        out = Path(cfg["run.output"])
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "config.txt", cfg.to_text())
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, threads)
        return cmd_bounds(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
