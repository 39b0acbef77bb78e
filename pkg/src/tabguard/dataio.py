"""Tabular ingestion: schema, CSV loading, cleaning, encoding, splits, synthetic data."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, LabelError, ParameterError, SchemaError

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none", "?"})
POSITIVE_TOKENS = ("1", "1.0", "yes", "y", "true", "t", "default", "bad", "fraud", "positive")
DEFAULT_CLIP = (0.01, 0.99)


@dataclass
class FeatureSpec:
    name: str
    kind: str = "numeric"
    lower: Optional[float] = None
    upper: Optional[float] = None
    immutable: bool = False
    sensitive: bool = False

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"feature {self.name!r}: kind must be numeric or categorical")
        if self.kind == "categorical" and (self.lower is not None or self.upper is not None):
            raise SchemaError(f"categorical feature {self.name!r} cannot carry bounds")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise SchemaError(f"feature {self.name!r}: lower bound exceeds upper bound")


@dataclass
class DatasetSchema:
    features: list
    target: str
    ids: list = field(default_factory=list)
    positive_label: Optional[str] = None
    clip_quantiles: tuple = DEFAULT_CLIP

    def __post_init__(self):
        self.features = [f if isinstance(f, FeatureSpec) else FeatureSpec(**f) for f in self.features]
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.target in names:
            raise SchemaError(f"target {self.target!r} is also listed as a feature")
        overlap = set(self.ids) & set(names)
        if overlap:
            raise SchemaError(f"id columns overlap features: {sorted(overlap)}")
        if self.target in self.ids:
            raise SchemaError("target cannot be an id column")
        lo, hi = self.clip_quantiles
        if not 0.0 <= lo < hi <= 1.0:
            raise SchemaError(f"invalid clip quantiles {self.clip_quantiles}")
        self.clip_quantiles = (float(lo), float(hi))

    @property
    def feature_names(self) -> list:
        return [f.name for f in self.features]

    def feature(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = {
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "lower": f.lower,
                    "upper": f.upper,
                    "immutable": f.immutable,
                    "sensitive": f.sensitive,
                }
                for f in self.features
            ],
            "target": self.target,
            "positive_label": self.positive_label,
            "ids": list(self.ids),
        }
        if self.clip_quantiles != DEFAULT_CLIP:
            d["clip_quantiles"] = list(self.clip_quantiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        try:
            feats = [
                FeatureSpec(
                    name=f["name"],
                    kind=f.get("kind", "numeric"),
                    lower=f.get("lower"),
                    upper=f.get("upper"),
                    immutable=bool(f.get("immutable", False)),
                    sensitive=bool(f.get("sensitive", False)),
                )
                for f in d["features"]
            ]
            pos = d.get("positive_label")
            return cls(
                features=feats,
                target=d["target"],
                ids=list(d.get("ids", [])),
                positive_label=None if pos is None else str(pos),
                clip_quantiles=tuple(d.get("clip_quantiles", DEFAULT_CLIP)),
            )
        except KeyError as exc:
            raise SchemaError(f"schema missing key {exc}") from None

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_schema(path) -> DatasetSchema:
    with open(path, encoding="utf-8") as fh:
        return DatasetSchema.from_dict(json.load(fh))


def save_schema(schema: DatasetSchema, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass
class RawTable:
    """Column-ordered cells. Numeric columns are float arrays with nan for
    missing; categorical/id/target columns are object arrays of str (None = missing)."""

    names: list
    columns: dict

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DataError("table is not rectangular")

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def take(self, idx) -> "RawTable":
        idx = np.asarray(idx, dtype=np.int64)
        return RawTable(list(self.names), {k: v[idx] for k, v in self.columns.items()})

    def copy(self) -> "RawTable":
        return RawTable(list(self.names), {k: v.copy() for k, v in self.columns.items()})

    def equals(self, other: "RawTable") -> bool:
        if self.names != other.names:
            return False
        for k in self.names:
            a, b = self.columns[k], other.columns[k]
            if a.dtype.kind == "f":
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif list(a) != list(b):
                return False
        return True


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _parse_float(cell: str, column: str, row: int) -> float:
    if _is_missing(cell):
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"column {column!r} row {row}: {cell!r} is not numeric") from None


def _table_from_rows(header, rows, schema: DatasetSchema) -> RawTable:
    if not rows:
        raise DataError("no data rows")
    required = schema.feature_names + [schema.target] + list(schema.ids)
    for name in required:
        if name not in header:
            raise SchemaError(f"missing column {name!r}")
    pos = {name: header.index(name) for name in required}
    columns = {}
    kinds = {f.name: f.kind for f in schema.features}
    for name in required:
        j = pos[name]
        cells = [r[j] if j < len(r) else "" for r in rows]
        if kinds.get(name) == "numeric":
            columns[name] = np.array(
                [_parse_float(c, name, i) for i, c in enumerate(cells)], dtype=np.float64
            )
        else:
            columns[name] = np.array([None if _is_missing(c) else c.strip() for c in cells], dtype=object)
    target = columns[schema.target]
    if any(v is None for v in target):
        raise LabelError(f"target column {schema.target!r} has missing values")
    distinct = sorted(set(target))
    if len(distinct) > 2:
        raise LabelError(f"target {schema.target!r} has {len(distinct)} distinct values: {distinct[:5]}")
    # keep the file's column order
    return RawTable([h for h in header if h in columns], columns)


def load_csv(path, schema: DatasetSchema) -> RawTable:
    """Read a header-first UTF-8 CSV, keeping only schema columns."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    return _table_from_rows(header, rows, schema)


def write_csv(table: RawTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(table_to_csv(table))


def table_to_csv(table: RawTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.names)
    cols = [table.columns[k] for k in table.names]
    for i in range(table.n):
        row = []
        for c in cols:
            v = c[i]
            if c.dtype.kind == "f":
                row.append("" if math.isnan(v) else repr(float(v)))
            else:
                row.append("" if v is None else str(v))
        w.writerow(row)
    return buf.getvalue()


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th smallest value (1-based)."""
    return float(np.quantile(values, q, method="inverted_cdf"))


def _mode(values) -> str:
    counts = {}
    for v in values:
        if v is not None:
            counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    return min(k for k, c in counts.items() if c == best)


def normalize_target(values, positive_label: Optional[str] = None) -> np.ndarray:
    distinct = sorted(set(values))
    if len(distinct) > 2:
        raise LabelError(f"target has {len(distinct)} distinct values")
    if positive_label is None:
        lowered = {v: str(v).strip().lower() for v in distinct}
        hits = [v for v in distinct if lowered[v] in POSITIVE_TOKENS]
        if len(hits) != 1:
            raise LabelError(
                f"cannot infer positive label from {distinct}; set positive_label in the schema"
            )
        positive_label = hits[0]
    pos = str(positive_label)
    return np.array([1 if str(v) == pos else 0 for v in values], dtype=np.int64)


def clean(raw: RawTable, schema: DatasetSchema) -> RawTable:
    """Impute (median / mode), clamp to declared bounds, clip to nearest-rank
    percentiles, and map the target to {0, 1}.

    Imputation runs before clipping. Nearest-rank percentiles are used so
    that cleaning an already-cleaned table is a no-op.
    """
    out = raw.copy()
    lo_q, hi_q = schema.clip_quantiles
    for f in schema.features:
        col = out.columns[f.name]
        if f.kind == "numeric":
            miss = np.isnan(col)
            if miss.all():
                raise DataError(f"column {f.name!r} is entirely missing")
            if miss.any():
                col[miss] = float(np.median(col[~miss]))
            if f.lower is not None or f.upper is not None:
                col = np.clip(
                    col,
                    -np.inf if f.lower is None else f.lower,
                    np.inf if f.upper is None else f.upper,
                )
            lo = nearest_rank(col, lo_q) if lo_q > 0.0 else -np.inf
            hi = nearest_rank(col, hi_q) if hi_q < 1.0 else np.inf
            out.columns[f.name] = np.clip(col, lo, hi)
        else:
            present = [v for v in col if v is not None]
            if not present:
                raise DataError(f"column {f.name!r} is entirely missing")
            fill = _mode(present)
            out.columns[f.name] = np.array([fill if v is None else v for v in col], dtype=object)
    tgt = out.columns[schema.target]
    if tgt.dtype == object and set(tgt) <= {0, 1} and all(isinstance(v, (int, np.integer)) for v in tgt):
        return out
    out.columns[schema.target] = np.array(normalize_target(list(tgt), schema.positive_label), dtype=object)
    return out


def labels_of(table: RawTable, schema: DatasetSchema) -> np.ndarray:
    col = table.columns[schema.target]
    if set(col) <= {0, 1}:
        return np.asarray(col, dtype=np.int64)
    return normalize_target(list(col), schema.positive_label)


@dataclass
class Preprocessor:
    """Training-split statistics.

    Standard deviations are population (ddof=0) values. Each categorical map
    reserves the final index for categories unseen during fitting.
    """

    numeric: list  # retained numeric feature names, in schema order
    means: dict
    stds: dict
    categories: dict  # feature -> list of training categories (sorted)
    clip: dict  # feature -> [lo, hi] nearest-rank percentiles on train
    impute: dict  # feature -> median (numeric) or mode (categorical)
    bounds: dict  # feature -> [lower|None, upper|None] from the schema
    dropped: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    std_ddof: int = 0

    @property
    def categorical(self) -> list:
        return list(self.categories)

    def category_index(self, feature: str) -> dict:
        cats = self.categories[feature]
        return {c: i for i, c in enumerate(cats)}

    @property
    def columns(self) -> list:
        cols = list(self.numeric)
        for feat, cats in self.categories.items():
            cols.extend(f"{feat}={c}" for c in cats)
            cols.append(f"{feat}=<unknown>")
        return cols

    @property
    def n_columns(self) -> int:
        return len(self.numeric) + sum(len(c) + 1 for c in self.categories.values())

    def groups(self) -> list:
        """(feature name, column indices) for every retained feature, in matrix order."""
        out = []
        for j, name in enumerate(self.numeric):
            out.append((name, [j]))
        start = len(self.numeric)
        for feat, cats in self.categories.items():
            width = len(cats) + 1
            out.append((feat, list(range(start, start + width))))
            start += width
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(**d)


def fit_preprocessor(train: RawTable, schema: DatasetSchema) -> Preprocessor:
    """Fit scaling, encoding, clip and imputation statistics on training rows only."""
    if train.n == 0:
        raise DataError("cannot fit a preprocessor on zero rows")
    numeric, means, stds, clip, impute, bounds = [], {}, {}, {}, {}, {}
    categories, dropped, warns = {}, [], []
    lo_q, hi_q = schema.clip_quantiles
    for f in schema.features:
        col = train.columns[f.name]
        if f.kind == "numeric":
            vals = col[~np.isnan(col)]
            if vals.size == 0:
                raise DataError(f"column {f.name!r} has no values in the training split")
            sd = float(np.std(vals))
            if not sd > 0.0:
                dropped.append(f.name)
                msg = f"numeric column {f.name!r} is constant on the training split; dropped"
                warns.append(msg)
                logger.warning(msg)
                continue
            numeric.append(f.name)
            means[f.name] = float(np.mean(vals))
            stds[f.name] = sd
            clip[f.name] = [
                nearest_rank(vals, lo_q) if lo_q > 0 else None,
                nearest_rank(vals, hi_q) if hi_q < 1 else None,
            ]
            impute[f.name] = float(np.median(vals))
            bounds[f.name] = [f.lower, f.upper]
        else:
            present = [v for v in col if v is not None]
            if not present:
                raise DataError(f"column {f.name!r} has no values in the training split")
            categories[f.name] = sorted(set(present))
            impute[f.name] = _mode(present)
    return Preprocessor(numeric, means, stds, categories, clip, impute, bounds, dropped, warns)


def transform(rows: RawTable, pre: Preprocessor, schema: Optional[DatasetSchema] = None):
    """Map raw rows to the normalized feature matrix.

    Returns ``(X, y)``; ``y`` is None when no schema (hence no target) is given.
    """
    n = rows.n
    X = np.empty((n, pre.n_columns), dtype=np.float64)
    for j, name in enumerate(pre.numeric):
        col = np.array(rows.columns[name], dtype=np.float64)
        col = np.where(np.isnan(col), pre.impute[name], col)
        lo, hi = pre.bounds.get(name, [None, None])
        col = np.clip(col, -np.inf if lo is None else lo, np.inf if hi is None else hi)
        X[:, j] = (col - pre.means[name]) / pre.stds[name]
    start = len(pre.numeric)
    for feat, cats in pre.categories.items():
        index = pre.category_index(feat)
        unknown = len(cats)
        block = np.zeros((n, unknown + 1))
        fill = pre.impute[feat]
        for i, v in enumerate(rows.columns[feat]):
            block[i, index.get(fill if v is None else v, unknown)] = 1.0
        X[:, start : start + unknown + 1] = block
        start += unknown + 1
    y = labels_of(rows, schema) if schema is not None and schema.target in rows.columns else None
    return X, y


def inverse_transform_numeric(X: np.ndarray, pre: Preprocessor) -> dict:
    """Original-unit values of the numeric columns of ``X``."""
    return {name: X[:, j] * pre.stds[name] + pre.means[name] for j, name in enumerate(pre.numeric)}


def decode_row(x: np.ndarray, pre: Preprocessor) -> dict:
    """Original-unit view of one normalized row (categoricals by argmax of their block)."""
    out = {}
    for j, name in enumerate(pre.numeric):
        out[name] = float(x[j] * pre.stds[name] + pre.means[name])
    start = len(pre.numeric)
    for feat, cats in pre.categories.items():
        block = x[start : start + len(cats) + 1]
        k = int(np.argmax(block))
        out[feat] = cats[k] if k < len(cats) else "<unknown>"
        start += len(cats) + 1
    return out


@dataclass
class Splits:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    ratios: tuple
    seed: int


def stratified_split(labels, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> Splits:
    """Per-class shuffled split; each part keeps the overall class balance."""
    labels = np.asarray(labels)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 3:
            raise DataError(f"class {cls!r} has {idx.size} members; at least 3 required")
        idx = rng.permutation(idx)
        n_train = int(round(ratios[0] * idx.size))
        n_val = int(round(ratios[1] * idx.size))
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train : n_train + n_val])
        parts[2].append(idx[n_train + n_val :])
    train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    return Splits(train, val, test, ratios, seed)


def generate_synthetic_credit(
    n: int = 5000,
    d_numeric: int = 15,
    d_categorical: int = 5,
    default_rate: float = 0.2,
    seed: int = 42,
    missing_rate: float = 0.0,
    signal: float = 0.75,
):
    """Seeded credit-style table with a logistic ground truth.

    A latent score ``beta . z + logistic noise`` (``z`` the standardized
    features) is thresholded at its empirical ``1 - default_rate`` quantile,
    which gives ``P(y=1 | x) = sigmoid(beta . z - t)`` and a realized
    positive rate of ``round(n * default_rate) / n``.

    Returns ``(RawTable, DatasetSchema)``.
    """
    if n < 100:
        raise ParameterError(f"n must be >= 100, got {n}")
    if not 0.0 < default_rate < 0.5:
        raise ParameterError(f"default_rate must lie in (0, 0.5), got {default_rate}")
    if d_numeric < 1 or d_categorical < 2:
        raise ParameterError("need at least one numeric and two categorical features")
    if not 0.0 <= missing_rate < 0.5:
        raise ParameterError("missing_rate must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)

    num_names, num_cols, num_specs = [], [], []
    templates = [
        ("income", lambda: np.round(np.exp(rng.normal(10.6, 0.45, n)), 2), 0.0, None),
        ("age", lambda: np.round(np.clip(rng.normal(42, 12, n), 18, 90)), 18.0, 90.0),
        ("utilization", lambda: np.round(rng.beta(2.0, 3.5, n), 4), 0.0, 1.0),
        ("debt_to_income", lambda: np.round(rng.gamma(2.0, 0.15, n), 4), 0.0, None),
        ("months_on_book", lambda: np.round(rng.gamma(3.0, 20.0, n)), 0.0, None),
        ("num_open_accounts", lambda: rng.poisson(6.0, n).astype(float), 0.0, None),
        ("recent_inquiries", lambda: rng.poisson(1.2, n).astype(float), 0.0, None),
        ("payment_ratio", lambda: np.round(rng.beta(5.0, 2.0, n), 4), 0.0, 1.0),
    ]
    for j in range(d_numeric):
        if j < len(templates):
            name, draw, lo, hi = templates[j]
        else:
            name, lo, hi = f"x{j:02d}", None, None
            draw = lambda: np.round(rng.normal(0.0, 1.0, n), 4)  # noqa: E731
        num_names.append(name)
        num_cols.append(np.asarray(draw(), dtype=np.float64))
        num_specs.append(FeatureSpec(name, "numeric", lo, hi))

    cat_templates = [
        ("region", ["north", "south", "east", "west"]),
        ("gender", ["F", "M"]),
        ("home_ownership", ["own", "mortgage", "rent"]),
        ("employment", ["salaried", "self_employed", "unemployed", "retired"]),
        ("channel", ["branch", "online", "broker"]),
    ]
    cat_names, cat_cols, cat_levels, cat_specs = [], [], [], []
    for j in range(d_categorical):
        if j < len(cat_templates):
            name, levels = cat_templates[j]
        else:
            name, levels = f"c{j:02d}", [f"L{k}" for k in range(3)]
        probs = rng.dirichlet(np.full(len(levels), 4.0))
        codes = rng.choice(len(levels), size=n, p=probs)
        cat_names.append(name)
        cat_cols.append(codes)
        cat_levels.append(levels)
        # first categorical is immutable, second is the sensitive attribute
        cat_specs.append(FeatureSpec(name, "categorical", immutable=(j == 0), sensitive=(j == 1)))

    Z = np.column_stack([(c - c.mean()) / c.std() for c in num_cols])
    beta = rng.normal(0.0, 1.0, d_numeric)
    beta *= signal / np.linalg.norm(beta) * math.sqrt(1.0 + 0.15 * d_numeric)
    latent = Z @ beta
    for codes in cat_cols:
        effects = rng.normal(0.0, 0.35, codes.max() + 1)
        latent = latent + effects[codes]
    latent = latent + rng.logistic(0.0, 1.0, n)
    k = int(round(n * default_rate))
    threshold = np.sort(latent)[n - k]
    y = (latent >= threshold).astype(np.int64)

    columns, names = {}, []
    columns["loan_id"] = np.array([f"L{i:06d}" for i in range(n)], dtype=object)
    names.append("loan_id")
    for name, col in zip(num_names, num_cols):
        if missing_rate > 0:
            col = col.copy()
            col[rng.random(n) < missing_rate] = math.nan
        columns[name] = col
        names.append(name)
    for name, codes, levels in zip(cat_names, cat_cols, cat_levels):
        cells = np.array([levels[c] for c in codes], dtype=object)
        if missing_rate > 0:
            cells[rng.random(n) < missing_rate] = None
        columns[name] = cells
        names.append(name)
    ead = np.round(np.exp(rng.normal(9.0, 0.6, n)), 2)
    columns["ead"] = np.array([repr(float(v)) for v in ead], dtype=object)
    names.append("ead")
    columns["default"] = np.array([str(v) for v in y], dtype=object)
    names.append("default")

    schema = DatasetSchema(
        features=num_specs + cat_specs, target="default", ids=["loan_id", "ead"], positive_label="1"
    )
    return RawTable(names, columns), schema


def prepare(raw: RawTable, schema: DatasetSchema, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """clean -> split -> fit on train -> transform all three parts.

    Returns a dict with the cleaned table, splits, preprocessor and
    ``(X, y)`` pairs under ``train``, ``validation`` and ``test``.
    """
    cleaned = clean(raw, schema)
    y_all = labels_of(cleaned, schema)
    splits = stratified_split(y_all, ratios, seed)
    pre = fit_preprocessor(cleaned.take(splits.train), schema)
    out = {"table": cleaned, "splits": splits, "preprocessor": pre}
    for part in ("train", "validation", "test"):
        out[part] = transform(cleaned.take(getattr(splits, part)), pre, schema)
    return out
