"""Assemble, validate and serialize the robustness report (JSON plus flat CSV tables)."""
from __future__ import annotations

import copy
import csv
import json
import math
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import AssemblyError, FormatError

REPORT_VERSION = 1
MODELS = ("baseline", "defended")
SCENARIOS = ("clean", "fgsm", "pgd")
OPTIONAL_BLOCKS = ("shap_stability", "sri", "bootstrap", "epsilon_sweep", "defense_comparison")
NOT_RUN = "not_run"

CSV_FILES = (
    "discrimination.csv",
    "calibration.csv",
    "economic.csv",
    "epsilon_sweep.csv",
    "cost_curve.csv",
    "reliability_bins.csv",
    "shap_stability.csv",
    "drift.csv",
    "fairness.csv",
    "bootstrap.csv",
)


def plain(obj):
    """JSON-ready copy: numpy scalars and arrays unwrapped, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _null_paths(obj, prefix=""):
    if obj is None:
        yield prefix
    elif isinstance(obj, dict):
        for k, v in obj.items():
            yield from _null_paths(v, f"{prefix}.{k}" if prefix else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _null_paths(v, f"{prefix}[{i}]")


def _nonfinite_paths(obj, prefix=""):
    if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
        yield prefix
    elif isinstance(obj, dict):
        for k, v in obj.items():
            yield from _nonfinite_paths(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _nonfinite_paths(v, f"{prefix}[{i}]")


def _default_reason(path: str) -> str:
    if path == "metadata.timestamps":
        return "disabled_for_reproducibility"
    if ".bins[" in path and path.endswith((".confidence", ".accuracy")):
        return "empty_bin"
    if path.endswith("fairness.reference_group"):
        return "two_groups"
    return "undefined"


def assemble(
    metadata: dict,
    scenarios: dict,
    shap_stability: Optional[dict] = None,
    sri: Optional[dict] = None,
    bootstrap: Optional[dict] = None,
    epsilon_sweep: Optional[list] = None,
    defense_comparison: Optional[list] = None,
    reasons: Optional[dict] = None,
) -> dict:
    """Build the report dict.

    ``scenarios`` maps model ("baseline" / "defended") to a dict of scenario
    ("clean" / "fgsm" / "pgd") blocks. Anything absent becomes null with
    reason "not_run" unless ``reasons`` names another code; every other null
    (e.g. an undefined metric or an empty calibration bin) gets a code naming why.
    """
    reasons = dict(reasons or {})
    base = scenarios.get("baseline") or {}
    if base.get("clean") is None:
        raise AssemblyError("the baseline clean scenario is required")
    keyset = None
    out_scen = {}
    for model in MODELS:
        blocks = scenarios.get(model)
        if blocks is None:
            out_scen[model] = None
            reasons.setdefault(f"scenarios.{model}", NOT_RUN)
            continue
        unknown = set(blocks) - set(SCENARIOS)
        if unknown:
            raise AssemblyError(f"unknown scenarios {sorted(unknown)} for {model}")
        out_scen[model] = {}
        for name in SCENARIOS:
            block = blocks.get(name)
            if block is None:
                out_scen[model][name] = None
                reasons.setdefault(f"scenarios.{model}.{name}", NOT_RUN)
                continue
            if not isinstance(block, dict):
                raise AssemblyError(f"scenario block {model}.{name} is not a mapping")
            if keyset is None:
                keyset = set(block)
            elif set(block) != keyset:
                raise AssemblyError(
                    f"scenario block {model}.{name} has keys {sorted(block)}, expected {sorted(keyset)}"
                )
            if name == "clean" and block.get("drift") is None:
                reasons.setdefault(f"scenarios.{model}.clean.drift", "reference_scenario")
            out_scen[model][name] = copy.deepcopy(block)

    extras = {
        "shap_stability": shap_stability,
        "sri": sri,
        "bootstrap": bootstrap,
        "epsilon_sweep": epsilon_sweep,
        "defense_comparison": defense_comparison,
    }
    for k, v in extras.items():
        if v is None:
            reasons.setdefault(k, NOT_RUN)
    report = {
        "report_version": REPORT_VERSION,
        "metadata": copy.deepcopy(metadata),
        "scenarios": out_scen,
        **{k: copy.deepcopy(v) for k, v in extras.items()},
    }
    for path in _nonfinite_paths(report):
        reasons.setdefault(path, "non_finite")
    report = plain(report)
    null_reasons = {p: reasons.get(p) or _default_reason(p) for p in _null_paths(report)}
    report["null_reasons"] = dict(sorted(null_reasons.items()))
    return report


def load_schema() -> dict:
    return json.loads(resources.files("tabguard").joinpath("report.schema.json").read_text(encoding="utf-8"))


def validate(report: dict) -> None:
    try:
        jsonschema.validate(report, load_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise FormatError(f"report fails schema at '{path}': {exc.message}") from None


def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False, ensure_ascii=False) + "\n"


def emit_json(report: dict, path) -> Path:
    path = Path(path)
    validate(report)
    text = to_json(report)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read report {path}: {exc}") from None


def fmt(v) -> str:
    """CSV cell: six significant digits for floats, blank for null."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _scenario_blocks(report):
    """(label, block) for every populated scenario; defended ones are prefixed."""
    for model in MODELS:
        blocks = report["scenarios"].get(model)
        if not blocks:
            continue
        for name in SCENARIOS:
            block = blocks.get(name)
            if block is not None:
                yield (name if model == "baseline" else f"{model}:{name}"), block


def csv_tables(report: dict) -> dict:
    """File name -> (header, rows) for every CSV table."""
    t = {name: None for name in CSV_FILES}
    blocks = list(_scenario_blocks(report))
    t["discrimination.csv"] = (
        ["scenario", "auroc", "ks", "gini", "accuracy"],
        [[s, b["discrimination"]["auroc"], b["discrimination"]["ks"], b["discrimination"]["gini"],
          b["discrimination"]["accuracy"]] for s, b in blocks],
    )
    t["calibration.csv"] = (
        ["scenario", "ece", "brier"],
        [[s, b["calibration"]["ece"], b["calibration"]["brier"]] for s, b in blocks],
    )
    t["economic.csv"] = (
        ["scenario", "expected_loss", "var", "es", "alpha", "n_sims", "best_tau", "bayes_tau"],
        [[s, b["economic"]["expected_loss"], b["economic"]["var"], b["economic"]["es"], b["economic"]["alpha"],
          b["economic"]["n_sims"], b["economic"]["best_tau"], b["economic"]["bayes_tau"]] for s, b in blocks],
    )
    t["cost_curve.csv"] = (
        ["scenario", "tau", "fp", "fn", "cost"],
        [[s, r["tau"], r["fp"], r["fn"], r["cost"]] for s, b in blocks for r in b["cost_curve"]],
    )
    t["reliability_bins.csv"] = (
        ["scenario", "bin", "lower", "upper", "count", "confidence", "accuracy"],
        [[s, r["bin"], r["lower"], r["upper"], r["count"], r["confidence"], r["accuracy"]]
         for s, b in blocks for r in b["calibration"]["bins"]],
    )
    drift_rows = []
    for s, b in blocks:
        d = b.get("drift")
        if d is None:
            continue
        drift_rows.append([s, "score", d["score"]["psi"], d["score"]["ks"], d["score"]["wasserstein"]])
        for name, f in d["features"].items():
            drift_rows.append([s, name, f["psi"], f["ks"], f["wasserstein"]])
    t["drift.csv"] = (["scenario", "target", "psi", "ks", "wasserstein"], drift_rows)
    fair_rows = []
    for s, b in blocks:
        f = b.get("fairness")
        if f is None:
            continue
        for g in f["groups"]:
            fair_rows.append([s, "positive_rate", g, f["positive_rate"][g]])
            fair_rows.append([s, "tpr", g, f["tpr"][g]])
        if f["reference_group"] is None:
            pair = "-".join(f["groups"])
            fair_rows.append([s, "demographic_parity_diff", pair, f["demographic_parity_diff"]])
            fair_rows.append([s, "equal_opportunity_diff", pair, f["equal_opportunity_diff"]])
        else:
            for g, v in f["pairwise"].items():
                pair = f"{g}-{f['reference_group']}"
                fair_rows.append([s, "demographic_parity_diff", pair, v["demographic_parity_diff"]])
                fair_rows.append([s, "equal_opportunity_diff", pair, v["equal_opportunity_diff"]])
    t["fairness.csv"] = (["scenario", "measure", "group", "value"], fair_rows)

    sweep = report.get("epsilon_sweep") or []
    t["epsilon_sweep.csv"] = (
        ["epsilon", "auroc", "ece", "brier", "expected_loss", "sri"],
        [[r["epsilon"], r["auroc"], r["ece"], r["brier"], r["expected_loss"], r.get("sri")] for r in sweep],
    )
    shap_rows = []
    for s, agg in (report.get("shap_stability") or {}).get("scenarios", {}).items():
        for metric in ("cosine", "spearman", "l2"):
            m = agg[metric]
            shap_rows.append([s, metric, m["mean"], m["median"], m["p05"], agg["n_instances"], agg["n_errors"]])
    t["shap_stability.csv"] = (["scenario", "metric", "mean", "median", "p05", "n_instances", "n_errors"], shap_rows)
    boot_rows = []
    for r in (report.get("bootstrap") or {}).get("intervals", []):
        boot_rows.append([r["metric"], r["scenario"], r["point"], r["lower"], r["upper"], r["level"], r["B"],
                          r["n_discarded"]])
    t["bootstrap.csv"] = (["metric", "scenario", "point", "lower", "upper", "level", "B", "n_discarded"], boot_rows)
    return t


def emit_csv(report: dict, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (header, rows) in csv_tables(report).items():
        path = directory / name
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([fmt(v) for v in row])
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written
