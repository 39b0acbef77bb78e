"""Natural-language explanations of attributions and the Semantic Robustness Index (SRI).

The prompt template (rendered by ``render_prompt``)::

    Explain a credit-risk model prediction for one applicant.
    Row: <row id>
    Predicted probability of default: <p, 4 decimals>
    Top <k> features by absolute SHAP contribution:
    - <feature>=<value>; contribution=<+/-x.xxxxxx> (increases risk | decreases risk | no effect)
    ...
    Answer in plain language. Start with the line "Top factor: <feature>".

The scenario tag is deliberately kept out of the prompt: the explainer must
not know whether an input was attacked.
"""
from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Optional

import numpy as np

from .errors import AggregateError, ParameterError, ProviderError

logger = logging.getLogger(__name__)

KEY_ENV = "TABGUARD_LLM_KEY"
_TOKEN = re.compile(r"[^\s,;:()\"']+")
_FEATURE_LINE = re.compile(r"^- (?P<name>[^=]+)=(?P<value>[^;]*); contribution=(?P<contrib>\S+) \((?P<phrase>[^)]*)\)$")
_RUBRIC_KEYS = ("plausibility", "stability", "consistency")


@dataclass
class SemanticConfig:
    provider: str = "stub"
    endpoint: Optional[str] = None
    model: Optional[str] = None
    top_k: int = 5
    max_in_flight: int = 4
    timeout_s: float = 30.0
    max_attempts: int = 3
    backoff_s: float = 1.0
    fallback_to_stub: bool = False

    def __post_init__(self):
        if self.provider not in ("stub", "live"):
            raise ParameterError(f"provider must be 'stub' or 'live', got {self.provider!r}")
        if self.top_k < 1:
            raise ParameterError("top_k must be >= 1")
        if self.max_in_flight < 1 or self.max_attempts < 1:
            raise ParameterError("max_in_flight and max_attempts must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SemanticConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class ExplanationCase:
    row_id: Any
    features: list  # (name, original-unit value, attribution), |attribution| descending
    probability: float
    scenario: str = "clean"

    def __post_init__(self):
        if not self.features:
            raise ParameterError("an explanation case needs at least one feature")


@dataclass
class SemanticScore:
    plausibility: float
    stability: float
    consistency: float

    def __post_init__(self):
        for name in _RUBRIC_KEYS:
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ProviderError(f"{name} score {v} outside [0, 1]")
            setattr(self, name, v)

    @property
    def composite(self) -> float:
        return (self.plausibility + self.stability + self.consistency) / 3.0

    def to_dict(self) -> dict:
        return {
            "plausibility": self.plausibility,
            "stability": self.stability,
            "consistency": self.consistency,
            "composite": self.composite,
        }


@dataclass
class InstanceResult:
    row_id: Any
    clean_text: str
    adv_text: str
    score: SemanticScore
    provider: str


@dataclass
class SriResult:
    instances: list
    sri: float
    provider: str
    n_errors: int = 0
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sri": self.sri,
            "provider": self.provider,
            "n_instances": len(self.instances),
            "n_errors": self.n_errors,
            "instances": [{"row_id": r.row_id, "provider": r.provider, **r.score.to_dict()} for r in self.instances],
        }


def _format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def make_case(row_id, attribution, values: dict, scenario: str = "clean", top_k: int = 5) -> ExplanationCase:
    """Top-k features of an ``Attribution`` by |SHAP|, paired with original-unit values."""
    vals = np.asarray(attribution.values, dtype=np.float64)
    k = min(top_k, vals.size)
    order = np.argsort(-np.abs(vals), kind="stable")[:k]
    feats = [(attribution.feature_names[j], values.get(attribution.feature_names[j]), float(vals[j])) for j in order]
    return ExplanationCase(row_id, feats, float(attribution.prediction), scenario)


def _phrase(a: float) -> str:
    if a > 0:
        return "increases risk"
    if a < 0:
        return "decreases risk"
    return "no effect"


def render_prompt(case: ExplanationCase) -> str:
    lines = [
        "Explain a credit-risk model prediction for one applicant.",
        f"Row: {case.row_id}",
        f"Predicted probability of default: {case.probability:.4f}",
        f"Top {len(case.features)} features by absolute SHAP contribution:",
    ]
    for name, value, a in case.features:
        lines.append(f"- {name}={_format_value(value)}; contribution={a:+.6f} ({_phrase(a)})")
    lines.append('Answer in plain language. Start with the line "Top factor: <feature>".')
    return "\n".join(lines) + "\n"


def stub_explain(prompt: str) -> str:
    """Deterministic offline explainer: restates the prompt's feature block."""
    feats = [m.groupdict() for m in map(_FEATURE_LINE.match, prompt.splitlines()) if m]
    prob = re.search(r"probability of default: (\S+)", prompt)
    if not feats:
        return "Top factor: none\nNo feature contributions were supplied.\n"
    out = [f"Top factor: {feats[0]['name']}"]
    if prob:
        out.append(f"Estimated default probability {prob.group(1)}.")
    for f in feats:
        out.append(f"{f['name']} at {f['value']} {f['phrase']} ({f['contrib']}).")
    return "\n".join(out) + "\n"


def redact(text: str, secret: Optional[str]) -> str:
    if secret:
        text = text.replace(secret, "***")
    return text


def _post_json(url: str, payload: dict, key: str, timeout: float) -> dict:
    req = urllib.request.Request(
        url,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json", "Authorization": f"Bearer {key}"},
        method="POST",
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode("utf-8"))


def query_llm(
    prompt: str,
    cfg: SemanticConfig,
    post: Callable[[str, dict, str, float], dict] = _post_json,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Explanation text from the configured provider.

    Live calls go to a chat-completion style endpoint with up to
    ``cfg.max_attempts`` attempts and exponential backoff. The credential is
    read from ``TABGUARD_LLM_KEY`` and never logged.
    """
    if cfg.provider == "stub":
        return stub_explain(prompt)
    if not cfg.endpoint:
        raise ProviderError("live provider needs an endpoint")
    key = os.environ.get(KEY_ENV)
    if not key:
        raise ProviderError(f"live provider needs the {KEY_ENV} environment variable")
    payload = {"model": cfg.model, "messages": [{"role": "user", "content": prompt}], "temperature": 0}
    last = None
    for attempt in range(1, cfg.max_attempts + 1):
        logger.debug("llm request attempt=%d url=%s auth=Bearer ***", attempt, cfg.endpoint)
        try:
            body = post(cfg.endpoint, payload, key, cfg.timeout_s)
            text = body["choices"][0]["message"]["content"]
            if not isinstance(text, str) or not text.strip():
                raise ProviderError("empty completion")
            logger.debug("llm response attempt=%d chars=%d", attempt, len(text))
            return text
        except urllib.error.HTTPError as exc:
            last = f"HTTP {exc.code}"
            if exc.code in (401, 403):
                break
        except (urllib.error.URLError, OSError, ValueError, KeyError, IndexError, TypeError, ProviderError) as exc:
            last = redact(f"{type(exc).__name__}: {exc}", key)
        logger.warning("llm attempt %d/%d failed: %s", attempt, cfg.max_attempts, last)
        if attempt < cfg.max_attempts:
            sleep(cfg.backoff_s * 2 ** (attempt - 1))
    raise ProviderError(f"provider failed after {attempt} attempt(s): {last}")


def tokens(text: str) -> set:
    return set(_TOKEN.findall(text.lower()))


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def top_factor(text: str) -> str:
    """Feature named on the "Top factor:" line, else the first token."""
    for line in text.splitlines():
        if line.strip().lower().startswith("top factor:"):
            return line.split(":", 1)[1].strip().lower()
    toks = _TOKEN.findall(text.lower())
    return toks[0] if toks else ""


def _rubric_prompt(clean_text: str, adv_text: str) -> str:
    return (
        "Two explanations of the same credit-risk decision follow. Score them.\n"
        "Return only a JSON object with keys plausibility, stability, consistency, each a number in [0, 1]:\n"
        "plausibility: how financially plausible both explanations are;\n"
        "stability: how similar the two explanations are;\n"
        "consistency: whether they cite the same main factor.\n"
        f"Explanation A:\n{clean_text}\nExplanation B:\n{adv_text}\n"
    )


def parse_rubric(text: str) -> SemanticScore:
    try:
        obj = json.loads(text.strip())
    except json.JSONDecodeError as exc:
        raise ProviderError(f"rubric response is not JSON: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != set(_RUBRIC_KEYS):
        raise ProviderError(f"rubric response must have exactly the keys {_RUBRIC_KEYS}")
    vals = []
    for k in _RUBRIC_KEYS:
        v = obj[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
            raise ProviderError(f"rubric field {k!r} is not a finite number")
        vals.append(float(v))
    return SemanticScore(*vals)


def score_pair(clean_text: str, adv_text: str, cfg: Optional[SemanticConfig] = None, **query_kw) -> SemanticScore:
    cfg = cfg or SemanticConfig()
    if not clean_text.strip() or not adv_text.strip():
        raise ParameterError("both explanation texts must be nonempty")
    if cfg.provider == "stub":
        same_top = top_factor(clean_text) == top_factor(adv_text)
        return SemanticScore(1.0, jaccard(tokens(clean_text), tokens(adv_text)), 1.0 if same_top else 0.0)
    return parse_rubric(query_llm(_rubric_prompt(clean_text, adv_text), cfg, **query_kw))


def _score_instance(case_clean, case_adv, cfg, query_kw):
    try:
        tc = query_llm(render_prompt(case_clean), cfg, **query_kw)
        ta = query_llm(render_prompt(case_adv), cfg, **query_kw)
        return InstanceResult(case_clean.row_id, tc, ta, score_pair(tc, ta, cfg, **query_kw), cfg.provider)
    except ProviderError:
        if not cfg.fallback_to_stub or cfg.provider == "stub":
            raise
        stub = SemanticConfig(provider="stub", top_k=cfg.top_k)
        tc = stub_explain(render_prompt(case_clean))
        ta = stub_explain(render_prompt(case_adv))
        return InstanceResult(case_clean.row_id, tc, ta, score_pair(tc, ta, stub), "stub_fallback")


def sri(cases, attributions_clean, attributions_adv, cfg: Optional[SemanticConfig] = None, **query_kw) -> SriResult:
    """Mean per-instance composite score over clean/adversarial explanation pairs.

    ``cases`` holds one ``(row_id, clean_values, adv_values)`` triple per
    instance, the value dicts mapping feature names to original-unit values;
    the attribution lists are row-aligned with it.
    """
    cfg = cfg or SemanticConfig()
    cases = list(cases)
    if not cases:
        raise AggregateError("no instances to score")
    if not (len(cases) == len(attributions_clean) == len(attributions_adv)):
        raise ParameterError("cases and attributions must be row-aligned")
    pairs = [
        (
            make_case(rid, ac, vc, "clean", cfg.top_k),
            make_case(rid, aa, va, "adversarial", cfg.top_k),
        )
        for (rid, vc, va), ac, aa in zip(cases, attributions_clean, attributions_adv)
    ]

    def work(pair):
        try:
            return _score_instance(pair[0], pair[1], cfg, query_kw)
        except (ProviderError, ParameterError) as exc:
            return {"row": pair[0].row_id, "error": str(exc)}

    workers = 1 if cfg.provider == "stub" else cfg.max_in_flight
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(work, pairs))
    done = [r for r in results if isinstance(r, InstanceResult)]
    errors = [r for r in results if not isinstance(r, InstanceResult)]
    if not done:
        raise AggregateError(f"all {len(results)} instances failed")
    providers = sorted({r.provider for r in done})
    value = float(np.mean([r.score.composite for r in done]))
    return SriResult(done, value, "+".join(providers), len(errors), errors)
