"""``perfgat`` command line: synth, build-graph, train, retrain, eval, roc.

Exit codes: 0 success, 2 configuration error, 3 data or filesystem error,
4 numeric divergence or structural collapse. Failures print a one-line JSON
error record to stderr and, when ``--out`` is known, to ``error.json``.

``PERFGAT_THREADS`` caps the BLAS/OpenMP worker count; it has to be applied
before numpy loads, hence the environment handling at import time.
"""
from __future__ import annotations

import os

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
_threads_raw = os.environ.get("PERFGAT_THREADS")
if _threads_raw is not None and _threads_raw.strip().isdigit() and int(_threads_raw) >= 1:
    for _var in _THREAD_VARS:
        os.environ[_var] = _threads_raw.strip()

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

from .config import RunConfig, load_config  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    DivergenceError,
    NumericError,
    PerfGATError,
    StructuralCollapseError,
)
from .metrics import roc_csv  # noqa: E402
from .model import init_params, prepare  # noqa: E402
from .storage import (  # noqa: E402
    check_compatible,
    cohort_dims,
    load_checkpoint,
    load_cohort,
    save_checkpoint,
    save_cohort,
    save_graphs,
)
from .synthdata import generate_cohort  # noqa: E402
from .graphgen import build_graphs  # noqa: E402
from .trainer import evaluate, retrain_classifier, split_dataset, train  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CHECKPOINT = "checkpoint.pgc"
RETRAINED = "retrained.pgc"


def thread_cap() -> int | None:
    """Validated ``PERFGAT_THREADS`` value, or ``None`` when unset."""
    if _threads_raw is None:
        return None
    raw = _threads_raw.strip()
    if not raw.isdigit() or int(raw) < 1:
        raise ConfigError(f"PERFGAT_THREADS: must be a positive integer, got {_threads_raw!r}")
    return int(raw)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_seed(args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _splits(cfg: RunConfig, volumes):
    samples = prepare(volumes, cfg.model)
    return split_dataset(samples, cfg.train.split, cfg.seed)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    cfg = _run_config(args)
    vols = generate_cohort(cfg.cohort)
    out = save_cohort(_out(args), vols, cfg.cohort.to_dict())
    _emit({"command": "synth", "out": str(out), "n_subjects": len(vols),
           "n_minority": sum(v.label for v in vols)})
    return EXIT_OK


def cmd_build_graph(args) -> int:
    cfg = _run_config(args)
    vols, _ = load_cohort(args.cohort)
    m = cfg.model
    graphs = [(v.subject_id, build_graphs(v, m.tau, m.k, m.absolute_threshold)) for v in vols]
    out = save_graphs(_out(args), graphs, m.tau, m.k)
    _emit({"command": "build-graph", "out": str(out), "n_graphs": len(graphs)})
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out(args)
    state = None
    if args.resume:
        _, meta, state = load_checkpoint(args.resume)
        cfg = RunConfig.from_dict(meta["config"])
        if state is None:
            raise ConfigError(f"{args.resume}: checkpoint holds no training state to resume")
    else:
        cfg = _run_config(args)
    vols, _ = load_cohort(args.cohort)
    dims = cohort_dims(vols)
    if args.resume:
        check_compatible(meta, dims, args.resume)
    train_set, val_set, _ = _splits(cfg, vols)
    params = init_params(cfg.model, dims["n_timepoints"], dims["patch_size"], cfg.seed)

    log_path = out / "train_log.jsonl"
    mode = "a" if args.resume else "w"
    with log_path.open(mode, encoding="utf-8") as log:
        def on_epoch(record):
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
        res = train(params, train_set, val_set, cfg.model, cfg.train, state=state,
                    on_epoch=on_epoch, until_epoch=args.stop_after)

    save_checkpoint(out / CHECKPOINT, res.params, config=cfg.to_dict(), dims=dims,
                    stage="train", state=res.state)
    report = evaluate(res.params, val_set, cfg.model, cfg.train.threshold)
    (out / "val_metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _emit({"command": "train", "checkpoint": str(out / CHECKPOINT), "epochs": res.state.epoch,
           "best_epoch": res.state.best_epoch, "stopped": res.state.stopped,
           "val": report.table_row()})
    return EXIT_OK


def cmd_retrain(args) -> int:
    out = _out(args)
    params, meta, _ = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(meta["config"])
    vols, _ = load_cohort(args.cohort)
    dims = cohort_dims(vols)
    check_compatible(meta, dims, args.checkpoint)
    train_set, val_set, _ = _splits(cfg, vols)
    rt = retrain_classifier(params, train_set, cfg.model, cfg.train)
    with (out / "retrain_log.jsonl").open("w", encoding="utf-8") as log:
        for record in rt.history:
            log.write(json.dumps(record, sort_keys=True) + "\n")
    save_checkpoint(out / RETRAINED, rt.params, config=cfg.to_dict(), dims=dims,
                    stage="retrain", extra={"n_synthetic": rt.n_synthetic})
    report = evaluate(rt.params, val_set, cfg.model, cfg.train.threshold)
    (out / "val_metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    _emit({"command": "retrain", "checkpoint": str(out / RETRAINED),
           "n_synthetic": rt.n_synthetic, "val": report.table_row()})
    return EXIT_OK


def _evaluate_split(args):
    params, meta, _ = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(meta["config"])
    vols, _ = load_cohort(args.cohort)
    check_compatible(meta, cohort_dims(vols), args.checkpoint)
    _, val_set, test_set = _splits(cfg, vols)
    samples = val_set if args.split == "val" else test_set
    return evaluate(params, samples, cfg.model, cfg.train.threshold)


def cmd_eval(args) -> int:
    out = _out(args)
    report = _evaluate_split(args)
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "roc.csv").write_text(roc_csv(report.roc_points), encoding="utf-8")
    row = report.table_row()
    _emit({"command": "eval", "split": args.split, "metrics": row,
           "auc_defined": report.auc is not None})
    return EXIT_OK


def cmd_roc(args) -> int:
    out = _out(args)
    report = _evaluate_split(args)
    (out / "roc.csv").write_text(roc_csv(report.roc_points), encoding="utf-8")
    _emit({"command": "roc", "split": args.split, "roc": str(out / "roc.csv"),
           "auc": report.auc})
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfgat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="JSON run configuration")
            sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", type=Path, required=True, help="output directory")

    sp = sub.add_parser("synth", help="generate a synthetic cohort")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("build-graph", help="export temporal and spatial graphs")
    sp.add_argument("cohort", type=Path)
    common(sp)
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("train", help="main training with early stopping")
    sp.add_argument("cohort", type=Path)
    common(sp)
    sp.add_argument("--resume", type=Path, help="continue from a saved checkpoint")
    sp.add_argument("--stop-after", type=int, default=None, metavar="EPOCH",
                    help="pause after this epoch (the checkpoint can be resumed)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("retrain", help="class-balanced fusion/classifier retraining")
    sp.add_argument("checkpoint", type=Path)
    sp.add_argument("cohort", type=Path)
    common(sp, config=False)
    sp.set_defaults(func=cmd_retrain)

    for name, func, text in (("eval", cmd_eval, "metrics and ROC on a split"),
                             ("roc", cmd_roc, "ROC points only")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("checkpoint", type=Path)
        sp.add_argument("cohort", type=Path)
        common(sp, config=False)
        sp.add_argument("--split", choices=("val", "test"), default="test")
        sp.set_defaults(func=func)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DivergenceError, NumericError, StructuralCollapseError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def _error_record(exc: BaseException, code: int) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("epoch", "batch"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        thread_cap()
        return args.func(args)
    except (PerfGATError, OSError) as exc:
        code = exit_code_for(exc)
        rec = _error_record(exc, code)
        print(json.dumps(rec, sort_keys=True), file=sys.stderr)
        out = getattr(args, "out", None)
        if out is not None:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                (Path(out) / "error.json").write_text(json.dumps(rec, sort_keys=True) + "\n")
            except OSError:
                pass
        return code


if __name__ == "__main__":
    sys.exit(main())
