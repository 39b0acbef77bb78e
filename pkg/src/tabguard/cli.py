"""tabguard command line: synth, train, evaluate, sweep, defend-compare."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import dataio, nn, pipeline, report
from .errors import TabGuardError
from .pipeline import RunConfig

logger = logging.getLogger("tabguard")

TRAIN_MODES = ("baseline", "pgd_adv", "noise")
CHECKPOINT_NAMES = {"baseline": "model.json", "pgd_adv": "model_pgd_adv.json", "noise": "model_noise.json"}


class JsonLinesFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, sort_keys=True)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLinesFormatter())
    root = logging.getLogger("tabguard")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


class StageOutputs:
    """Tracks files written by a stage and removes them if the stage fails."""

    def __init__(self):
        self.paths = []

    def add(self, path) -> Path:
        self.paths.append(Path(path))
        return Path(path)

    def rollback(self) -> None:
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _path(cfg: RunConfig, out: Path, key: str, default: str) -> Path:
    p = cfg.paths.get(key)
    return Path(p) if p else out / default


def _load_data(cfg: RunConfig, out: Path):
    schema = dataio.load_schema(_path(cfg, out, "schema", "schema.json"))
    raw = dataio.load_csv(_path(cfg, out, "data", "data.csv"), schema)
    return raw, schema


def _load_model(cfg: RunConfig, out: Path, key: str = "checkpoint", default: str = "model.json"):
    path = _path(cfg, out, key, default)
    if not path.exists():
        raise TabGuardError(f"checkpoint {path} not found; run 'tabguard train' first")
    return nn.load_checkpoint(path)


def _prepared_for(ckpt, raw, schema, cfg: RunConfig):
    warnings = []
    w = nn.check_fingerprint(ckpt, schema.fingerprint())
    if w:
        warnings.append(w)
    pre = dataio.Preprocessor.from_dict(ckpt.preprocessor) if ckpt.preprocessor else None
    return pipeline.prepare(raw, schema, cfg.ratios, cfg.seeds()["split"], pre), warnings


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([report.fmt(r[k]) for k in header])


def cmd_synth(args, cfg: RunConfig, out: Path, outputs: StageOutputs) -> dict:
    raw, schema = pipeline.synthetic_benchmark(cfg)
    data_path = outputs.add(_path(cfg, out, "data", "data.csv"))
    schema_path = outputs.add(_path(cfg, out, "schema", "schema.json"))
    dataio.write_csv(raw, data_path)
    dataio.save_schema(schema, schema_path)
    n_pos = int(dataio.labels_of(dataio.clean(raw, schema), schema).sum())
    return {"stage": "synth", "rows": raw.n, "positives": n_pos, "data": str(data_path), "schema": str(schema_path)}


def cmd_train(args, cfg: RunConfig, out: Path, outputs: StageOutputs) -> dict:
    raw, schema = _load_data(cfg, out)
    prep = pipeline.prepare(raw, schema, cfg.ratios, cfg.seeds()["split"])
    ckpt = pipeline.train_model(prep, cfg, args.mode)
    key = "checkpoint" if args.mode == "baseline" else f"checkpoint_{args.mode}"
    path = outputs.add(_path(cfg, out, key, CHECKPOINT_NAMES[args.mode]))
    nn.save_checkpoint(ckpt, path)
    return {
        "stage": "train",
        "mode": args.mode,
        "checkpoint": str(path),
        "best_val_auroc": ckpt.best_val_auroc,
        "best_epoch": ckpt.best_epoch,
        "epochs": ckpt.train_config.epochs,
    }


def _scenarios(arg: str) -> tuple:
    return ("clean",) + pipeline.ATTACKS if arg == "all" else tuple(dict.fromkeys(("clean", arg)))


def cmd_evaluate(args, cfg: RunConfig, out: Path, outputs: StageOutputs) -> dict:
    raw, schema = _load_data(cfg, out)
    ckpt = _load_model(cfg, out)
    prep, warnings = _prepared_for(ckpt, raw, schema, cfg)
    defended = None
    if cfg.paths.get("defended_checkpoint"):
        defended = nn.load_checkpoint(cfg.paths["defended_checkpoint"]).params
    rep = pipeline.full_evaluation(
        ckpt.params,
        prep,
        cfg,
        scenarios=_scenarios(args.scenario),
        shap=not args.no_shap,
        sri=not (args.no_semantic or args.no_shap),
        bootstrap=not args.no_bootstrap,
        defended=defended,
        warnings=warnings,
    )
    if not args.no_semantic and args.no_shap:
        rep["null_reasons"]["sri"] = "requires_shap"
    outputs.add(out / "report.json")
    report.emit_json(rep, out / "report.json")
    for name in report.CSV_FILES:
        outputs.add(out / name)
    report.emit_csv(rep, out)
    base = rep["scenarios"]["baseline"]
    summary = {"stage": "evaluate", "report": str(out / "report.json")}
    for kind in ("clean",) + pipeline.ATTACKS:
        if base.get(kind):
            summary[f"{kind}_auroc"] = base[kind]["discrimination"]["auroc"]
    return summary


def cmd_sweep(args, cfg: RunConfig, out: Path, outputs: StageOutputs) -> dict:
    raw, schema = _load_data(cfg, out)
    ckpt = _load_model(cfg, out)
    prep, _ = _prepared_for(ckpt, raw, schema, cfg)
    eps = args.epsilons if args.epsilons is not None else cfg.sweep.get("epsilons", pipeline.DEFAULT_EPSILONS)
    test_table = prep.part("test")
    with_sri = bool(cfg.sweep.get("sri", False)) and not args.no_semantic and not args.no_shap
    rows = pipeline.epsilon_sweep(
        ckpt.params, prep, test_table, cfg, eps, with_sri, pipeline.row_ids_of(test_table, schema)
    )
    path = outputs.add(out / "epsilon_sweep.csv")
    header, table = report.csv_tables({"scenarios": {}, "epsilon_sweep": rows})["epsilon_sweep.csv"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in table:
            w.writerow([report.fmt(v) for v in r])
    jpath = outputs.add(out / "epsilon_sweep.json")
    jpath.write_text(json.dumps(report.plain(rows), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"stage": "sweep", "csv": str(path), "rows": len(rows)}


def cmd_defend_compare(args, cfg: RunConfig, out: Path, outputs: StageOutputs) -> dict:
    raw, schema = _load_data(cfg, out)
    seeds = cfg.defense.get("compare_seeds")
    rows = pipeline.defend_compare(raw, schema, cfg, seeds)
    means = pipeline.mean_by_model(rows)
    path = outputs.add(out / "defense_comparison.csv")
    _write_rows(path, ["model", "clean_auroc", "pgd_auroc", "pgd_ece", "pgd_el"], means)
    jpath = outputs.add(out / "defense_comparison.json")
    jpath.write_text(
        json.dumps(report.plain({"per_seed": rows, "mean": means}), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return {"stage": "defend-compare", "csv": str(path), "models": [m["model"] for m in means]}


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "defend-compare": cmd_defend_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--out", default="tabguard_out", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--scenario", choices=("clean", "fgsm", "pgd", "all"), default="all")
    common.add_argument("--no-shap", action="store_true", help="skip attribution stability")
    common.add_argument("--no-semantic", action="store_true", help="skip the semantic robustness index")
    common.add_argument("--no-bootstrap", action="store_true", help="skip bootstrap intervals")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tabguard", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write the seeded synthetic credit table and schema")
    p = sub.add_parser("train", parents=[common], help="train a baseline or hardened model")
    p.add_argument("--mode", choices=TRAIN_MODES, default="baseline")
    sub.add_parser("evaluate", parents=[common], help="clean and adversarial evaluation report")
    p = sub.add_parser("sweep", parents=[common], help="PGD metrics across attack budgets")
    p.add_argument("--epsilons", type=float, nargs="+", help="attack budgets (must include 0)")
    sub.add_parser("defend-compare", parents=[common], help="baseline vs defenses side by side")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    outputs = StageOutputs()
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](args, cfg, out, outputs)
    except (TabGuardError, OSError, ValueError) as exc:
        outputs.rollback()
        logger.error("%s failed: %s", args.command, exc)
        print(f"tabguard {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report.plain(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
