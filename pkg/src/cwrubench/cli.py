"""Command-line interface.

Exit status: 0 on success, 1 when a validation or audit check fails, 2 on
I/O or data errors (missing files, unreadable inputs, malformed plan files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import urllib.error
import urllib.request
from dataclasses import replace
from pathlib import Path

from . import catalog, report
from .catalog import PIN_FILE, CatalogError, Manifest, load_manifest, read_pins, sha256_file, verify_manifest
from .dsp import FeatureStore, Representation, SignalLengthError, write_feature_file
from .matfile import MatFileError
from .protocol import (
    Experiment, LeakageError, ProtocolError, Selection, cv_evaluate, cvm_select,
    prepare_records, provenance, run_ablation_suite,
)
from .splitgen import EVAL_SEEDS, Mode, SplitPlan, audit_no_leakage, generate, by_fault_size_for_run

log = logging.getLogger("cwrubench")

OK, FAILED, IO_ERROR = 0, 1, 2
CACHE_ENV = "CWRUBENCH_CACHE"


class CliError(Exception):
    def __init__(self, message: str, code: int = IO_ERROR):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------- helpers


def _manifest(args) -> Manifest:
    try:
        return load_manifest(args.manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read manifest: {exc}") from exc


def _records(args):
    if args.synthetic:
        return catalog.synthetic_catalog(args.synthetic_samples, 0)
    try:
        return catalog.build_catalog(_manifest(args), args.data_dir)
    except catalog.ChecksumError as exc:
        raise CliError(str(exc), FAILED) from exc
    except (CatalogError, MatFileError, OSError) as exc:
        raise CliError(f"{exc} (run `cwrubench fetch` first, or pass --synthetic)") from exc


def _store(args, overlap: float) -> FeatureStore:
    return FeatureStore(Path(args.cache_dir) if args.cache_dir else None, overlap)


def _parse_seeds(text: str) -> tuple[int, ...]:
    out = []
    for part in text.split(","):
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return tuple(out)


def _experiment(args) -> Experiment:
    try:
        exp = Experiment.from_file(args.experiment) if args.experiment else Experiment()
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"cannot read experiment: {exc}") from exc
    over = {}
    for name in ("seeds", "overlap", "max_epochs", "batch_sizes", "learning_rates", "level", "name"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "representation", None):
        over["representation"] = Representation(args.representation)
    if args.synthetic and "name" not in over and not exp.name:
        over["name"] = "synthetic"
    if getattr(args, "no_retune", False):
        over["retune"] = False
    return replace(exp, **over) if over else exp


def _emit(text: str) -> None:
    sys.stdout.write(text + ("\n" if not text.endswith("\n") else ""))
    sys.stdout.flush()


# --------------------------------------------------------------------------- fetch / ingest / features


def _download(url: str, dest: Path) -> None:
    tmp = dest.with_suffix(dest.suffix + ".part")
    with urllib.request.urlopen(url, timeout=60) as resp, open(tmp, "wb") as fh:
        shutil.copyfileobj(resp, fh)
    tmp.replace(dest)


def cmd_fetch(args) -> int:
    manifest = _manifest(args)
    data = Path(args.data_dir)
    data.mkdir(parents=True, exist_ok=True)
    pins = read_pins(data)
    failures, quarantined = [], []
    for e in manifest.entries:
        path = data / e.file
        if not path.exists():
            url = f"{args.base_url.rstrip('/')}/{e.file}" if args.base_url else e.url
            log.info("downloading %s", url)
            try:
                _download(url, path)
            except (urllib.error.URLError, OSError) as exc:
                failures.append(f"{e.file}: {exc}")
                continue
        want = e.sha256 or pins.get(e.file)
        if want is not None and sha256_file(path) != want:
            qdir = data / "quarantine"
            qdir.mkdir(exist_ok=True)
            path.replace(qdir / e.file)
            quarantined.append(e.file)
    if args.pin:
        for e in manifest.entries:
            path = data / e.file
            if path.exists() and e.file not in pins and e.sha256 is None:
                pins[e.file] = sha256_file(path)
        (data / PIN_FILE).write_text(json.dumps(pins, indent=1, sort_keys=True) + "\n")
    rep = verify_manifest(manifest, data)
    _emit(f"present {len(rep.present)}, missing {len(rep.missing)}, unpinned {len(rep.unpinned)}, "
          f"quarantined {len(quarantined)}")
    for q in quarantined:
        _emit(f"checksum mismatch, quarantined: {q}")
    for f in failures:
        _emit(f"download failed: {f}")
    if quarantined:
        return FAILED
    return IO_ERROR if failures or rep.missing else OK


def cmd_ingest(args) -> int:
    records = _records(args)
    catalog.check_catalog(records)
    lengths = [len(r) for r in records]
    _emit(f"{len(records)} records, {len({r.condition for r in records})} conditions, "
          f"samples per record {min(lengths)}..{max(lengths)}")
    if args.out:
        rows = [{"record_id": r.record_id, "source_file": r.source_file, "samples": len(r), "label": list(r.label),
                 "rpm": r.rpm} for r in records]
        Path(args.out).write_text(json.dumps(rows, indent=1) + "\n")
    return OK


def cmd_features(args) -> int:
    records = _records(args)
    if args.half:
        records = catalog.truncate_half(records)
    store = _store(args, args.overlap if args.overlap is not None else Experiment().overlap)
    reps = [Representation(r) for r in (args.representation or [Representation.POWER_CEPSTRUM.value])]
    for rep in reps:
        before = store.computed
        try:
            fs = store.features(records, rep)
        except SignalLengthError as exc:
            raise CliError(str(exc)) from exc
        _emit(f"{rep.value}: {len(fs)} inputs of shape {fs.input_shape}, computed {store.computed - before}, "
              f"cached {len(records) - (store.computed - before)}")
    return OK


# --------------------------------------------------------------------------- splits


def _plan(mode: Mode, seed: int) -> SplitPlan:
    if mode in (Mode.BY_FAULT_SIZE, Mode.BY_FAULT_SIZE_INVERTED):
        return by_fault_size_for_run(seed, inverted=mode is Mode.BY_FAULT_SIZE_INVERTED)
    return generate(mode, seed)


def cmd_split(args) -> int:
    plan = _plan(Mode(args.mode), args.seed)
    text = plan.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        _emit(text)
    return OK


def cmd_audit(args) -> int:
    records = _records(args) if (args.synthetic or args.with_data) else catalog.skeleton_catalog()
    plans = []
    if args.all_seeds is not None:
        plans = [_plan(Mode(args.mode), s) for s in args.all_seeds]
    if args.plan:
        try:
            plans.append(SplitPlan.from_json(Path(args.plan).read_text()))
        except OSError as exc:
            raise CliError(f"cannot read plan: {exc}") from exc
        except ValueError as exc:
            raise CliError(f"malformed plan: {exc}") from exc
    if not plans:
        raise CliError("give a plan file or --all-seeds")
    failed = 0
    for plan in plans:
        rep = audit_no_leakage(plan, records)
        tag = f"{plan.mode.value} seed {plan.seed}"
        if rep.passed:
            _emit(f"PASS {tag}")
        else:
            failed += 1
            _emit(f"FAIL {tag}")
            for v in rep.violations:
                _emit(f"  {v}")
    return FAILED if failed else OK


# --------------------------------------------------------------------------- experiments


def _load_selection(path) -> Selection:
    try:
        return Selection.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read selection: {exc}") from exc


def cmd_tune(args) -> int:
    exp = _experiment(args)
    sel = cvm_select(exp, _records(args), _store(args, exp.overlap), args.workers)
    out = exp.results_dir(args.results_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "selection.json").write_text(json.dumps(sel.to_dict(), indent=1) + "\n")
    _emit(f"selected batch {sel.hyper.batch_size}, lr {sel.hyper.learning_rate:g}, {sel.epochs} epochs -> {out}")
    return OK


def _export_spectrograms(args, records, out: Path) -> None:
    store = FeatureStore(None, args.overlap if args.overlap is not None else Experiment().overlap)
    dest = out / "spectrograms"
    for r in records:
        fs = store.get(r, Representation.SPECTROGRAM)
        write_feature_file(dest / f"{r.record_id.replace('/', '_')}.cwrf", fs, {"source_file": r.source_file})
    _emit(f"exported {len(records)} spectrogram files to {dest}")


def cmd_run(args) -> int:
    exp = _experiment(args)
    records = _records(args)
    out = exp.results_dir(args.results_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.export_spectrograms or exp.model_family == "external-export":
        _export_spectrograms(args, prepare_records(exp, records), out)
        if exp.model_family == "external-export":
            return OK
    store = _store(args, exp.overlap)
    if args.selection:
        sel = _load_selection(args.selection)
    else:
        sel = cvm_select(exp, records, store, args.workers)
    (out / "selection.json").write_text(json.dumps(sel.to_dict(), indent=1) + "\n")
    rep = cv_evaluate(exp, sel.hyper, sel.epochs, records, store, args.workers,
                      metadata={"synthetic_data": bool(args.synthetic)})
    payload = {"experiment": exp.to_dict(), "selection": sel.to_dict(), "report": rep.to_dict()}
    label = f"WDCNN {exp.representation.value}"
    report.write_run_outputs(out, payload, rep, label, svg=not args.no_svg, timestamp=args.timestamp)
    _emit(report.summary_text(rep, label))
    _emit(f"results: {out}")
    return OK


def cmd_ablate(args) -> int:
    base = _experiment(args)
    records = _records(args)
    suite = run_ablation_suite(base, records, _store(args, base.overlap), args.workers)
    out = Path(args.results_dir) / f"ablation-{base.digest()[:12]}"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for res in suite.rows:
        e = res.experiment
        rows.append(((e.scope.value, e.split_type, e.split_ratio, e.signal_length.value), res.report))
        payload = {"experiment": e.to_dict(), "selection": res.selection.to_dict(), "report": res.report.to_dict(),
                   "provenance": provenance(e)}
        report.write_run_outputs(e.results_dir(out), payload, res.report, e.name, svg=not args.no_svg,
                                 timestamp=args.timestamp)
    table = report.results_table(rows, ("model", "split type", "split ratio", "signal length"))
    (out / "ablation.csv").write_text(report.to_csv(table))
    _emit(report.format_console(table))
    _emit(f"results: {out}")
    return OK


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read report {path}: {exc}") from exc
        rep = doc.get("report", doc)
        name = doc.get("experiment", {}).get("name") or Path(path).parent.name
        cells = rep["cells"]
        rows.append([name] + [f"{100 * cells[n]['mean']:.1f} ± {100 * cells[n]['std']:.1f}" for n in report.DETECTOR_NAMES]
                    + [f"{100 * rep['macro']['mean']:.1f} ± {100 * rep['macro']['std']:.1f}"])
    header = ["run"] + [n.replace("-", " ") for n in report.DETECTOR_NAMES] + ["macro average"]
    table = [header] + rows
    if args.csv:
        Path(args.csv).write_text(report.to_csv(table))
    _emit(report.format_console(table))
    return OK


# --------------------------------------------------------------------------- parser


def _experiment_flags(p):
    p.add_argument("--experiment", help="experiment JSON file (defaults to WDCNN power cepstrum, proposed 2:1)")
    p.add_argument("--representation", choices=[r.value for r in Representation])
    p.add_argument("--seeds", type=_parse_seeds, help="e.g. 0..29 or 0,3,5")
    p.add_argument("--overlap", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-sizes", type=lambda s: tuple(int(x) for x in s.split(",")))
    p.add_argument("--learning-rates", type=lambda s: tuple(float(x) for x in s.split(",")))
    p.add_argument("--level", choices=("segment", "signal"))
    p.add_argument("--name")
    p.add_argument("--timestamp", help="fixed report timestamp (for byte-identical reruns)")
    p.add_argument("--no-svg", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cwrubench", description="Leakage-free CWRU bearing benchmark harness.")
    ap.add_argument("--data-dir", default="data/raw", help="directory holding the .mat files")
    ap.add_argument("--cache-dir", default=os.environ.get(CACHE_ENV),
                    help=f"feature cache directory (env {CACHE_ENV})")
    ap.add_argument("--results-dir", default="results")
    ap.add_argument("--manifest", help="manifest JSON (defaults to the packaged one)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--log-level", default="WARNING")
    ap.add_argument("--synthetic", action="store_true", help="use the built-in synthetic catalog instead of CWRU data")
    ap.add_argument("--synthetic-samples", type=int, default=24000)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and verify the raw recordings")
    p.add_argument("--base-url", help="mirror to fetch from instead of the manifest URLs")
    p.add_argument("--pin", action="store_true", help=f"record checksums of unpinned files in {PIN_FILE}")
    p.set_defaults(fn=cmd_fetch)

    p = sub.add_parser("ingest", help="parse, resample and check the 114 records")
    p.add_argument("--out", help="write a JSON record summary")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("features", help="fill the feature cache")
    p.add_argument("--representation", action="append", choices=[r.value for r in Representation])
    p.add_argument("--overlap", type=float)
    p.add_argument("--half", action="store_true")
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("split", help="write a split plan")
    p.add_argument("--mode", default=Mode.PROPOSED_HOLDOUT.value, choices=[m.value for m in Mode])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("audit", help="check split plans for leakage")
    p.add_argument("plan", nargs="?")
    p.add_argument("--all-seeds", type=_parse_seeds, nargs="?", const=EVAL_SEEDS)
    p.add_argument("--mode", default=Mode.PROPOSED_HOLDOUT.value, choices=[m.value for m in Mode])
    p.add_argument("--with-data", action="store_true", help="audit against the ingested records")
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("tune", help="hyperparameter selection only")
    _experiment_flags(p)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("run", help="tune, evaluate over the seeded splits and write reports")
    _experiment_flags(p)
    p.add_argument("--selection", help="reuse a selection.json instead of tuning")
    p.add_argument("--export-spectrograms", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ablate", help="run the six ablation rows")
    _experiment_flags(p)
    p.add_argument("--no-retune", action="store_true", help="reuse the first row's hyperparameters")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="tabulate report.json files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        _emit("error: --workers must be at least 1")
        return IO_ERROR
    try:
        return args.fn(args)
    except CliError as exc:
        _emit(f"error: {exc}")
        return exc.code
    except LeakageError as exc:
        _emit(f"leakage: {exc}")
        return FAILED
    except ProtocolError as exc:
        _emit(f"error: {exc}")
        return FAILED
    except OSError as exc:
        _emit(f"error: {exc}")
        return IO_ERROR


if __name__ == "__main__":
    sys.exit(main())
