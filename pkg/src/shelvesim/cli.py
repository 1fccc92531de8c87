"""Command-line front end.

    shelvesim spam    --config run.ini --seed 7 --n 50000 --out out/
    shelvesim scan    --config run.ini --out scan/
    shelvesim fit     scan/scan.csv --out fit/
    shelvesim rb      --out rb/
    shelvesim budget  [components.json] --out budget/
    shelvesim two-ion --out two_ion/
    shelvesim selftest

Exit codes: 0 ok, 2 config error, 3 runtime error, 4 self-test failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BudgetRow,
    assemble_budget,
    fit_A_M1,
    fit_rb_decay,
    reference_budget_rows,
    to_decibels,
    wilson_interval,
)
from .atomic import ConfigError
from .config import RunConfig, load_config
from .dynamics import asymptotic_shelving_error, finite_time_shelving_error
from .photons import histogram, histograms_to_csv, histograms_to_json
from .protocol import (
    ONE,
    ZERO,
    calibrate_thresholds,
    run_randomized_benchmarking,
    run_shelving_scan,
    run_spam_campaign,
    run_two_ion_discrimination,
    summarize_campaign,
)
from .records import records_to_csv, records_to_jsonl, scan_from_csv, scan_to_csv

log = logging.getLogger("shelvesim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELFTEST = 0, 2, 3, 4


def _dumps(obj) -> str:
    def default(o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def write_artifacts(out: Path, files: dict[str, str]) -> None:
    """Write all files or none: stage in a temp dir, then move into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out))
    try:
        for name, text in files.items():
            (stage / name).write_text(text)
        for name in files:
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def manifest(command: str, cfg: RunConfig, extra: dict | None = None) -> str:
    return _dumps({"command": command, "version": __version__, "config": cfg.to_dict(),
                   **(extra or {})})


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "n", None) is not None:
        over["n_per_state"] = args.n
    return cfg.with_overrides(**over) if over else cfg


def _estimate_dict(e):
    return {"k": e.k, "n": e.n, "p_hat": e.p_hat, "ci_low": e.ci_low, "ci_high": e.ci_high,
            "p_hat_db": to_decibels(e.p_hat) if e.p_hat > 0 else None}


def cmd_spam(args) -> int:
    cfg = _resolve(args)
    r = cfg.run
    thresholds = calibrate_thresholds(cfg.protocol, cfg.counts, cfg.constants, r.seed,
                                      n_per_state=r.calibration_n_per_state, lasers=cfg.lasers,
                                      detect_bound=r.detect_error_bound,
                                      doppler_bound=r.doppler_error_bound, threads=args.threads)
    records = run_spam_campaign(cfg.protocol, cfg.counts, cfg.constants, r.n_per_state, r.seed,
                                thresholds, lasers=cfg.lasers, threads=args.threads)
    summary = summarize_campaign(records)
    hists = [histogram([x.detect_counts for x in records if x.prepared == label], label)
             for label in (ONE, ZERO)]
    report = summary.to_dict()
    report["thresholds_sha256"] = thresholds.digest
    avg = summary.inaccuracy
    text = (
        f"shots per state        {r.n_per_state}\n"
        f"detection cutoff       {thresholds.detect_cutoff} counts\n"
        f"doppler cutoff         {thresholds.doppler_cutoff} counts\n"
        f"|0> inaccuracy         {summary.zero.errors_unflagged}/{summary.zero.unflagged}\n"
        f"|1> inaccuracy         {summary.one.errors_unflagged}/{summary.one.unflagged}\n"
        f"average inaccuracy     {avg.p_hat:.3e}  [{avg.ci_low:.3e}, {avg.ci_high:.3e}] (1 sigma Wilson)\n"
    )
    if avg.p_hat > 0:
        text += f"average inaccuracy dB  {to_decibels(avg.p_hat):.1f}\n"
    inf = summary.infidelity
    text += f"average infidelity     {inf.p_hat:.3e}  [{inf.ci_low:.3e}, {inf.ci_high:.3e}]\n"
    write_artifacts(Path(args.out), {
        "records.csv": records_to_csv(records),
        "records.jsonl": records_to_jsonl(records),
        "histograms.csv": histograms_to_csv(hists),
        "histograms.json": histograms_to_json(hists),
        "thresholds.json": thresholds.to_json(),
        "report.json": _dumps(report),
        "report.txt": text,
        "manifest.json": manifest("spam", cfg),
    })
    sys.stdout.write(text)
    return EXIT_OK


def scan_rows(cfg: RunConfig, times=None) -> list[dict]:
    s = cfg.scan
    times = s.times if times is None else times
    rows = []
    for scheme in s.schemes:
        points = run_shelving_scan(times, scheme, s.n_per_point, cfg.run.seed,
                                   constants=cfg.constants, counts_model=cfg.counts,
                                   lasers=cfg.lasers)
        asym = asymptotic_shelving_error(cfg.constants) if scheme == "nm935" else 0.0
        for p in points:
            est = wilson_interval(p.errors, p.trials)
            finite = float(finite_time_shelving_error(p.time, cfg.constants))
            rows.append({"scheme": scheme, "time_s": p.time, "errors": p.errors,
                         "trials": p.trials, "error_rate": est.p_hat, "wilson_low": est.ci_low,
                         "wilson_high": est.ci_high, "model": asym + finite,
                         "model_asymptote": asym, "model_finite": finite})
    return rows


def cmd_scan(args) -> int:
    cfg = _resolve(args)
    times = None
    if args.times:
        times = tuple(float(t) for t in args.times.split(","))
        cfg = dataclasses.replace(cfg, scan=dataclasses.replace(cfg.scan, times=times))
    rows = scan_rows(cfg)
    write_artifacts(Path(args.out), {"scan.csv": scan_to_csv(rows),
                                     "manifest.json": manifest("scan", cfg)})
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _resolve(args)
    try:
        text = Path(args.scan_csv).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scan file: {exc}") from None
    points = scan_from_csv(text, scheme="nm935")
    est = fit_A_M1(points, cfg.constants, delta_loglik=cfg.fit.delta_loglik)
    v, lo, hi = est.in_mhz()
    body = est.to_dict()
    body["branching_ratio"] = est.value * cfg.constants.tau_D
    summary = (f"A_M1 = 2pi x {v:.2f} mHz  (+{hi - v:.2f} / -{v - lo:.2f}, "
               f"delta logL = {est.delta_loglik})\n")
    if args.out:
        write_artifacts(Path(args.out), {"fit.json": _dumps(body), "fit.txt": summary,
                                         "manifest.json": manifest("fit", cfg,
                                                                   {"scan_csv": Path(args.scan_csv).name})})
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_rb(args) -> int:
    cfg = _resolve(args)
    rb = cfg.rb
    res = run_randomized_benchmarking(rb.lengths, rb.n_seqs, rb.eps_per_gate, cfg.run.seed,
                                      n_shots=rb.n_shots)
    fit = fit_rb_decay(res.lengths, res.survival, res.trials)
    csv_text = "length,survival,trials\n" + "".join(
        f"{m},{s!r},{n}\n" for m, s, n in zip(res.lengths, res.survival, res.trials))
    summary = f"eps per gate = {fit.eps:.3e} +- {fit.eps_err:.1e}"
    if fit.eps > 0:
        summary += f"  ({to_decibels(fit.eps):.1f} dB)"
    summary += "\n"
    write_artifacts(Path(args.out), {"rb.csv": csv_text,
                                     "rb_report.json": _dumps({"data": res.to_dict(),
                                                               "fit": fit.to_dict()}),
                                     "manifest.json": manifest("rb", cfg)})
    sys.stdout.write(summary)
    return EXIT_OK


def load_budget_components(path) -> list[BudgetRow]:
    if path is None:
        return reference_budget_rows()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read budget components: {exc}") from None
    rows = data["rows"] if isinstance(data, dict) else data
    try:
        return [BudgetRow(**{k: v for k, v in r.items() if k != "expectation"}) for r in rows]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad budget row: {exc}") from None


def cmd_budget(args) -> int:
    budget = assemble_budget(load_budget_components(args.components))
    table = budget.table()
    write_artifacts(Path(args.out), {"budget.json": _dumps(budget.to_dict()),
                                     "budget.txt": table})
    sys.stdout.write(table)
    return EXIT_OK


def cmd_two_ion(args) -> int:
    cfg = _resolve(args)
    t = cfg.two_ion
    res = run_two_ion_discrimination(t.n_cycles, cfg.two_ion_counts(), seed=cfg.run.seed,
                                     p_one_shelved=t.p_one_shelved,
                                     storage_rate_per_bin=t.storage_rate_per_bin,
                                     storage_mean_bins=t.storage_mean_bins)
    body = res.to_dict()
    body["wilson_upper"] = wilson_interval(res.misclassified, max(res.evaluated, 1)).ci_high
    write_artifacts(Path(args.out), {"two_ion.json": _dumps(body),
                                     "manifest.json": manifest("two-ion", cfg)})
    sys.stdout.write(f"misclassified {res.misclassified} of {res.evaluated} "
                     f"(vetoed {res.vetoed})\n")
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Fast closed-form checks; exit code 4 if any fails."""
    from .atomic import AtomicConstants
    from .dynamics import shelving_error_analytic
    from .photons import choose_detection_threshold, choose_doppler_threshold

    c = AtomicConstants()
    budget = assemble_budget(reference_budget_rows())
    checks = {
        "asymptote 8.2e-5": abs(shelving_error_analytic(10.0, c) / 8.2e-5 - 1) < 0.02,
        "finite-time term 6e-6": abs(float(finite_time_shelving_error(0.2, c)) / 6e-6 - 1) < 0.10,
        "budget inaccuracy 0.9e-4": round(budget.predicted_avg_inaccuracy * 1e4, 1) == 0.9,
        "budget infidelity 2.4e-4": round(budget.predicted_avg_infidelity * 1e4, 1) == 2.4,
        "detection threshold": choose_detection_threshold(0.1, 1e-7) == 5,
        "doppler threshold": choose_doppler_threshold(100, 1e-6) == 56,
    }
    for name, ok in checks.items():
        sys.stdout.write(f"{'PASS' if ok else 'FAIL'}  {name}\n")
    return EXIT_OK if all(checks.values()) else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shelvesim", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True, out_required=True):
        p.add_argument("--config", help="INI config or manifest.json to replay")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        if out:
            p.add_argument("--out", required=out_required)
        return p

    p = common(sub.add_parser("spam", help="full SPAM campaign"))
    p.add_argument("--n", type=int, help="shots per prepared state")
    p.set_defaults(func=cmd_spam)

    p = common(sub.add_parser("scan", help="shelving error versus 411 nm time"))
    p.add_argument("--times", help="comma-separated shelving times in seconds")
    p.set_defaults(func=cmd_scan)

    p = common(sub.add_parser("fit", help="fit the M1 rate to a scan CSV"), out_required=False)
    p.add_argument("scan_csv")
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("rb", help="randomized benchmarking"))
    p.set_defaults(func=cmd_rb)

    p = sub.add_parser("budget", help="assemble an error budget")
    p.add_argument("components", nargs="?", help="JSON list of budget rows (default: reference rows)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_budget)

    p = common(sub.add_parser("two-ion", help="two-ion S/F discrimination"))
    p.set_defaults(func=cmd_two_ion)

    p = sub.add_parser("selftest", help="closed-form sanity checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
