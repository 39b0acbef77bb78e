"""End-to-end orchestration shared by the CLI and the acceptance suite.

Every stage seed is derived from one master seed and the stage name, so a
stage can be rerun on its own and still reproduce the full-chain result.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataio, defense, explain, metrics, nn, report, semantic, stats
from .attacks import AttackConfig, DomainProjector, fgsm, pgd
from .driftfair import drift_report, fairness_report
from .econrisk import (
    CostSpec,
    ExposureBook,
    bayes_threshold,
    cost_curve,
    economic_confusion,
    economic_summary,
    es,
    expected_loss,
    simulate_losses,
    var,
)
from .errors import MetricError, ParameterError, StatisticsError
from .seeding import derive_seed

logger = logging.getLogger(__name__)

STAGES = ("split", "train", "attack", "econ", "shap", "semantic", "bootstrap", "defense")
DEFAULT_EPSILONS = (0.0, 0.01, 0.05, 0.10)
ATTACKS = ("fgsm", "pgd")


@dataclass
class RunConfig:
    """Unified configuration; every block is optional and falls back to module defaults."""

    seed: int = 42
    paths: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    defense: dict = field(default_factory=dict)
    econ: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    drift: dict = field(default_factory=dict)
    fairness: dict = field(default_factory=dict)
    shap: dict = field(default_factory=dict)
    semantic: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ParameterError(f"unknown config blocks: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config {path} is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def seeds(self) -> dict:
        return {"master": int(self.seed), **{s: derive_seed(self.seed, s) for s in STAGES}}

    @property
    def ratios(self) -> tuple:
        return tuple(self.split.get("ratios", (0.6, 0.2, 0.2)))

    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig.from_dict({"seed": self.seeds()["train"], **self.train})

    def attack_config(self, **kw) -> AttackConfig:
        return AttackConfig.from_dict({"seed": self.seeds()["attack"], **self.attack, **kw})

    def defense_config(self, mode: str) -> defense.DefenseConfig:
        d = dict(self.defense)
        d["mode"] = mode
        d["attack"] = {"seed": self.seeds()["defense"], **self.attack, **d.get("attack", {})}
        return defense.DefenseConfig.from_dict(d)


@dataclass
class Prepared:
    """Cleaned table, split and matrices in a fixed preprocessor's space."""

    schema: dataio.DatasetSchema
    table: dataio.RawTable
    splits: dataio.Splits
    pre: dataio.Preprocessor
    train: tuple
    validation: tuple
    test: tuple

    def part(self, name: str) -> dataio.RawTable:
        return self.table.take(getattr(self.splits, name))


def prepare(raw, schema, ratios, split_seed: int, pre: Optional[dataio.Preprocessor] = None) -> Prepared:
    """Clean and split; fit the preprocessor on train unless one is given (e.g. from a checkpoint)."""
    cleaned = dataio.clean(raw, schema)
    y_all = dataio.labels_of(cleaned, schema)
    splits = dataio.stratified_split(y_all, ratios, split_seed)
    if pre is None:
        pre = dataio.fit_preprocessor(cleaned.take(splits.train), schema)
    parts = {p: dataio.transform(cleaned.take(getattr(splits, p)), pre, schema) for p in ("train", "validation", "test")}
    return Prepared(schema, cleaned, splits, pre, parts["train"], parts["validation"], parts["test"])


def synthetic_benchmark(cfg: RunConfig) -> tuple:
    """The seeded synthetic table; the generator uses the master seed itself."""
    return dataio.generate_synthetic_credit(seed=cfg.seed, **cfg.synth)


def train_model(prep: Prepared, cfg: RunConfig, mode: str = "baseline") -> nn.MlpCheckpoint:
    tcfg = cfg.train_config()
    kw = {"preprocessor": prep.pre.to_dict(), "schema_fingerprint": prep.schema.fingerprint()}
    if mode == "baseline":
        ckpt = nn.train(prep.train, prep.validation, tcfg, **kw)
    elif mode == "pgd_adv":
        projector = DomainProjector.from_schema(prep.schema, prep.pre)
        ckpt = defense.adversarial_train(prep.train, prep.validation, tcfg, cfg.defense_config("pgd_adv_training"), projector, **kw)
    elif mode == "noise":
        ckpt = defense.noise_regularized_train(prep.train, prep.validation, tcfg, cfg.defense_config("noise_regularized"), **kw)
    else:
        raise ParameterError(f"unknown training mode {mode!r}")
    ckpt.meta = {**ckpt.meta, "mode": mode}
    return ckpt


def exposure_book(table: dataio.RawTable, cfg: RunConfig) -> ExposureBook:
    econ = cfg.econ
    n = table.n
    lgd_col, ead_col = econ.get("lgd_column"), econ.get("ead_column", "ead")
    if lgd_col and lgd_col in table.columns:
        lgd = np.asarray(table.columns[lgd_col], dtype=np.float64)
    else:
        lgd = np.full(n, float(econ.get("lgd_default", 0.45)))
    if ead_col and ead_col in table.columns:
        ead = np.asarray(table.columns[ead_col], dtype=np.float64)
    else:
        ead = np.full(n, float(econ.get("ead_default", 1.0)))
    return ExposureBook(lgd, ead)


def cost_spec(cfg: RunConfig) -> CostSpec:
    return CostSpec(float(cfg.econ.get("cost_fp", 1.0)), float(cfg.econ.get("cost_fn", 5.0)))


def econ_params(cfg: RunConfig) -> tuple:
    return int(cfg.econ.get("n_sims", 50_000)), float(cfg.econ.get("alpha", 0.95)), int(cfg.econ.get("seed", cfg.seeds()["econ"]))


def sensitive_groups(table: dataio.RawTable, schema: dataio.DatasetSchema, cfg: RunConfig):
    name = cfg.fairness.get("feature")
    if name is None:
        sens = [f.name for f in schema.features if f.sensitive]
        if not sens:
            return None, None
        name = sens[0]
    return name, np.asarray(table.columns[name], dtype=object)


def attack_sets(model, X, y, cfg: RunConfig, projector, kinds=ATTACKS, **attack_kw) -> dict:
    acfg = cfg.attack_config(**attack_kw)
    out = {}
    if "fgsm" in kinds:
        out["fgsm"] = fgsm(model, X, y, acfg, projector)
    if "pgd" in kinds:
        out["pgd"] = pgd(model, X, y, acfg, projector)
    return out


def _drift_features(prep: Prepared):
    immutable = {f.name for f in prep.schema.features if f.immutable}
    return [name for name in prep.pre.numeric if name not in immutable]


def scenario_block(
    model,
    X,
    X_clean,
    y,
    kind: str,
    prep: Prepared,
    test_table: dataio.RawTable,
    cfg: RunConfig,
    attack_cfg: Optional[AttackConfig] = None,
    scores_clean=None,
) -> dict:
    """All per-scenario metric suites for one scored matrix."""
    mcfg = cfg.metrics
    tau = float(mcfg.get("tau", 0.5))
    scores = model.predict_proba(X)
    book = exposure_book(test_table, cfg)
    cost = cost_spec(cfg)
    n_sims, alpha, econ_seed = econ_params(cfg)
    curve, best_tau = cost_curve(scores, cost, int(cfg.econ.get("grid_size", 101)), labels=y)
    econ = economic_summary(scores, book, n_sims, alpha, econ_seed)
    econ.update(
        best_tau=best_tau,
        bayes_tau=bayes_threshold(cost),
        cost_fp=cost.c_fp,
        cost_fn=cost.c_fn,
        confusion=economic_confusion(scores, best_tau, cost, book, labels=y),
    )
    drift = None
    if kind != "clean":
        names = _drift_features(prep)
        orig_c = dataio.inverse_transform_numeric(X_clean, prep.pre)
        orig_a = dataio.inverse_transform_numeric(X, prep.pre)
        drift = drift_report(
            np.column_stack([orig_c[n] for n in names]) if names else np.zeros((X.shape[0], 0)),
            np.column_stack([orig_a[n] for n in names]) if names else np.zeros((X.shape[0], 0)),
            names,
            scores_clean,
            scores,
            int(cfg.drift.get("bins", 10)),
        ).to_dict()
    fair = None
    feature, groups = sensitive_groups(test_table, prep.schema, cfg)
    if feature is not None:
        try:
            fair = {"feature": feature, **fairness_report(scores, y, groups, float(cfg.fairness.get("tau", tau))).to_dict()}
        except MetricError as exc:
            logger.warning("fairness skipped: %s", exc)
    delta = np.abs(X - X_clean)
    return {
        "n": int(X.shape[0]),
        "attack": {"kind": kind, **(attack_cfg.to_dict() if attack_cfg is not None else {})},
        "perturbation": {"linf_max": float(delta.max()) if delta.size else 0.0, "mean_abs": float(delta.mean()) if delta.size else 0.0},
        "discrimination": metrics.discrimination_summary(scores, y, tau),
        "calibration": metrics.calibration_summary(scores, y, int(mcfg.get("n_bins", 10)), mcfg.get("binning", "width")),
        "economic": econ,
        "cost_curve": curve,
        "drift": drift,
        "fairness": fair,
    }


def evaluate_model(model, prep: Prepared, test_table, cfg: RunConfig, scenarios=("clean",) + ATTACKS):
    """Scenario blocks plus the raw matrices (for SHAP / bootstrap reuse)."""
    X, y = prep.test
    projector = DomainProjector.from_schema(prep.schema, prep.pre)
    acfg = cfg.attack_config()
    mats = {"clean": X}
    mats.update(attack_sets(model, X, y, cfg, projector, [s for s in scenarios if s != "clean"]))
    scores_clean = model.predict_proba(X)
    blocks = {}
    for kind in ("clean",) + ATTACKS:
        if kind in mats:
            blocks[kind] = scenario_block(
                model, mats[kind], X, y, kind, prep, test_table, cfg, None if kind == "clean" else acfg, scores_clean
            )
    return blocks, mats


def shap_and_sri(model, prep: Prepared, mats: dict, cfg: RunConfig, row_ids, with_sri: bool = True):
    """Attribution stability per attack and, optionally, the semantic robustness index."""
    seeds = cfg.seeds()
    scfg = cfg.shap
    n_inst = int(scfg.get("n_instances", 50))
    n_coal = int(scfg.get("n_coalitions", 1024))
    m_bg = int(scfg.get("background", 100))
    Xtr = prep.train[0]
    rng = np.random.default_rng(seeds["shap"])
    bg = Xtr[np.sort(rng.choice(Xtr.shape[0], size=min(m_bg, Xtr.shape[0]), replace=False))]
    groups = prep.pre.groups()
    adv = {k: v for k, v in mats.items() if k != "clean"}
    if not adv:
        return None, None, {}
    res = explain.stability_reports(model, mats["clean"], adv, bg, n_inst, seeds["shap"], n_coal, groups, keep_attributions=True)
    shap_block = {
        "n_instances": n_inst,
        "n_coalitions": n_coal,
        "background_rows": int(bg.shape[0]),
        "seed": seeds["shap"],
        "scenarios": {k: stats_.aggregate() for k, (stats_, _) in res.items()},
    }
    pairs = {k: p for k, (_, p) in res.items()}
    sri_block = None
    if with_sri:
        sri_block = semantic_block(prep, mats, pairs, cfg, row_ids)
    return shap_block, sri_block, pairs


def semantic_block(prep: Prepared, mats: dict, pairs: dict, cfg: RunConfig, row_ids) -> Optional[dict]:
    scfg = semantic.SemanticConfig.from_dict(cfg.semantic)
    out = {"provider": scfg.provider, "top_k": scfg.top_k, "scenarios": {}}
    for kind, plist in pairs.items():
        cases, ac, aa = [], [], []
        for i, p in enumerate(plist):
            if p is None:
                continue
            cases.append(
                (row_ids[i], dataio.decode_row(mats["clean"][i], prep.pre), dataio.decode_row(mats[kind][i], prep.pre))
            )
            ac.append(p[0])
            aa.append(p[1])
        if cases:
            out["scenarios"][kind] = semantic.sri(cases, ac, aa, scfg).to_dict()
    return out


def bootstrap_block(model, prep: Prepared, mats: dict, test_table, cfg: RunConfig) -> dict:
    """Paired percentile CIs (clean vs each attack) for AUROC, EL, VaR and ES."""
    seeds = cfg.seeds()
    st = cfg.stats
    B = int(st.get("bootstrap_b", 1000))
    level = float(st.get("level", 0.95))
    seed = int(st.get("seed", seeds["bootstrap"]))
    tail_B = int(st.get("tail_b", 200))
    tail_sims = int(st.get("tail_sims", 1000))
    _, alpha, econ_seed = econ_params(cfg)
    y = prep.test[1]
    book = exposure_book(test_table, cfg)

    def el(pd, lgd, ead):
        return float(np.sum(pd * lgd * ead))

    def tail(fn):
        def metric(pd, lgd, ead):
            return fn(simulate_losses(pd, ExposureBook(lgd, ead), tail_sims, econ_seed), alpha)

        return metric

    scores = {k: model.predict_proba(v) for k, v in mats.items()}
    intervals, separation = [], {}
    for kind in [k for k in ATTACKS if k in scores]:
        specs = [
            ("auroc", metrics.auroc, (scores["clean"], y), (scores[kind], y), B),
            ("expected_loss", el, (scores["clean"], book.lgd, book.ead), (scores[kind], book.lgd, book.ead), B),
            ("var", tail(var), (scores["clean"], book.lgd, book.ead), (scores[kind], book.lgd, book.ead), tail_B),
            ("es", tail(es), (scores["clean"], book.lgd, book.ead), (scores[kind], book.lgd, book.ead), tail_B),
        ]
        for name, fn, da, db, b in specs:
            try:
                ca, cb, cd = stats.paired_bootstrap_ci(fn, da, db, b, level, seed)
            except StatisticsError as exc:
                logger.warning("bootstrap %s/%s skipped: %s", name, kind, exc)
                continue
            # clean replicates reuse the same row indices for every attack, so one clean row suffices
            if not any(r["metric"] == name and r["scenario"] == "clean" for r in intervals):
                intervals.append({"metric": name, "scenario": "clean", **ca.to_dict()})
            intervals.append({"metric": name, "scenario": kind, **cb.to_dict()})
            intervals.append({"metric": name, "scenario": f"clean-{kind}", **cd.to_dict()})
            separation[f"{name}:clean_vs_{kind}"] = stats.ci_separated(ca, cb)
    return {"level": level, "seed": seed, "paired": True, "intervals": intervals, "separated": separation}


def epsilon_sweep(model, prep: Prepared, test_table, cfg: RunConfig, epsilons=None, with_sri: bool = False, row_ids=None):
    """PGD metrics per epsilon; the epsilon = 0 row scores the clean inputs exactly."""
    eps = list(DEFAULT_EPSILONS if epsilons is None else epsilons)
    uniq = sorted(set(float(e) for e in eps))
    if len(uniq) != len(eps):
        logger.warning("duplicate epsilon values removed: %s", eps)
    if any(e < 0 for e in uniq):
        raise ParameterError("epsilons must be >= 0")
    if 0.0 not in uniq:
        raise ParameterError("the epsilon list must include 0")
    X, y = prep.test
    projector = DomainProjector.from_schema(prep.schema, prep.pre)
    book = exposure_book(test_table, cfg)
    rows, mats = [], {"clean": X}
    for e in uniq:
        X_e = X if e == 0.0 else pgd(model, X, y, cfg.attack_config(epsilon=e), projector)
        mats[f"eps={e:g}"] = X_e
        s = model.predict_proba(X_e)
        rows.append(
            {
                "epsilon": e,
                "auroc": metrics.auroc(s, y),
                "ece": metrics.ece(s, y, int(cfg.metrics.get("n_bins", 10)), cfg.metrics.get("binning", "width"))[0],
                "brier": metrics.brier(s, y),
                "expected_loss": expected_loss(s, book)[1],
                "sri": None,
            }
        )
    if with_sri:
        sub = RunConfig.from_dict({**cfg.to_dict(), "shap": {**cfg.shap, "n_instances": int(cfg.sweep.get("sri_instances", 20))}})
        sweep_mats = {"clean": X, **{k: v for k, v in mats.items() if k not in ("clean", "eps=0")}}
        _, sri_block, _ = shap_and_sri(model, prep, sweep_mats, sub, row_ids)
        for r in rows:
            key = f"eps={r['epsilon']:g}"
            if r["epsilon"] == 0.0:
                r["sri"] = 1.0
            elif sri_block and key in sri_block["scenarios"]:
                r["sri"] = sri_block["scenarios"][key]["sri"]
    return rows


def row_ids_of(table: dataio.RawTable, schema: dataio.DatasetSchema) -> list:
    for name in schema.ids:
        col = table.columns.get(name)
        if col is not None and len(set(col)) == len(col):
            return [str(v) for v in col]
    return [str(i) for i in range(table.n)]


def run_metadata(cfg: RunConfig, prep: Prepared, warnings=()) -> dict:
    return {
        "master_seed": int(cfg.seed),
        "seeds": cfg.seeds(),
        "config": cfg.to_dict(),
        "schema_fingerprint": prep.schema.fingerprint(),
        "timestamps": None,
        "warnings": list(warnings),
    }


def full_evaluation(
    model,
    prep: Prepared,
    cfg: RunConfig,
    scenarios=("clean",) + ATTACKS,
    shap: bool = True,
    sri: bool = True,
    bootstrap: bool = True,
    defended=None,
    warnings=(),
) -> dict:
    test_table = prep.part("test")
    row_ids = row_ids_of(test_table, prep.schema)
    blocks, mats = evaluate_model(model, prep, test_table, cfg, scenarios)
    scen = {"baseline": blocks}
    if defended is not None:
        scen["defended"] = evaluate_model(defended, prep, test_table, cfg, scenarios)[0]
    shap_block = sri_block = boot = None
    reasons = {}
    has_attacks = any(k != "clean" for k in mats)
    if shap and has_attacks:
        shap_block, sri_block, _ = shap_and_sri(model, prep, mats, cfg, row_ids, with_sri=sri)
    elif shap or sri:
        reasons.update(shap_stability="no_attack_scenario", sri="no_attack_scenario")
    if sri and not shap:
        reasons["sri"] = "requires_shap"
    if bootstrap and has_attacks:
        boot = bootstrap_block(model, prep, mats, test_table, cfg)
    elif bootstrap:
        reasons["bootstrap"] = "no_attack_scenario"
    return report.assemble(
        run_metadata(cfg, prep, warnings),
        scen,
        shap_stability=shap_block,
        sri=sri_block,
        bootstrap=boot,
        reasons=reasons,
    )


def defend_compare(raw, schema, cfg: RunConfig, seeds=None) -> list:
    """Baseline vs both defenses on identical splits; one row per (model, train seed)."""
    prep = prepare(raw, schema, cfg.ratios, cfg.seeds()["split"])
    test_table = prep.part("test")
    X, y = prep.test
    projector = DomainProjector.from_schema(schema, prep.pre)
    book = exposure_book(test_table, cfg)
    rows = []
    for ts in seeds or [cfg.seeds()["train"]]:
        sub = RunConfig.from_dict({**cfg.to_dict(), "train": {**cfg.train, "seed": int(ts)}})
        for label, mode in (("baseline", "baseline"), ("pgd_adv_training", "pgd_adv"), ("noise_regularized", "noise")):
            ckpt = train_model(prep, sub, mode)
            model = ckpt.params
            Xp = pgd(model, X, y, cfg.attack_config(), projector)
            sp = model.predict_proba(Xp)
            rows.append(
                {
                    "model": label,
                    "train_seed": int(ts),
                    "clean_auroc": metrics.auroc(model.predict_proba(X), y),
                    "pgd_auroc": metrics.auroc(sp, y),
                    "pgd_ece": metrics.ece(sp, y)[0],
                    "pgd_el": expected_loss(sp, book)[1],
                }
            )
            logger.info("defend-compare %s seed=%d pgd_auroc=%.6f", label, ts, rows[-1]["pgd_auroc"])
    return rows


def mean_by_model(rows: list) -> list:
    out = []
    for label in dict.fromkeys(r["model"] for r in rows):
        sel = [r for r in rows if r["model"] == label]
        out.append(
            {"model": label, **{k: float(np.mean([r[k] for r in sel])) for k in ("clean_auroc", "pgd_auroc", "pgd_ece", "pgd_el")}}
        )
    return out
