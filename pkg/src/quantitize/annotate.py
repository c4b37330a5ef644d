"""Annotation of units through an instructable model or a deterministic mock.

A prompt template is rendered per unit (or unit pair), sent to a model
client, and the raw response is normalized against the coding scheme.
Transport errors are retried with exponential backoff; refusals are
recorded as such without retry. Every run carries a manifest (template,
model identity, decoding controls, seed) sufficient to replicate it, and
all raw traffic can be appended to a JSONL audit log.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import requests

from .corpus import Corpus, CodingScheme, Unit, Variable, approx_tokens
from .errors import ConfigError, DataError, TransportError

log = logging.getLogger(__name__)

REFUSED = "Refused"
UNPARSEABLE = "Unparseable"


def run_timestamp() -> str:
    """Wall-clock timestamp, overridable via SOURCE_DATE_EPOCH for
    byte-reproducible runs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(timezone.utc)
    return moment.isoformat()


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction text with placeholders resolved per unit.

    Supported placeholders: {text}, {title} (from unit metadata), {target}
    (from unit metadata), and for pair mode {a}/{b} (the two texts).
    """

    instruction: str
    variable: str
    pair_mode: bool = False

    def render(self, unit: Unit) -> str:
        values = {"text": unit.text, **unit.meta}
        return self._fill(values, unit.id)

    def render_pair(self, a: Unit, b: Unit, target: Optional[str] = None) -> str:
        values = {"a": a.text, "b": b.text, **a.meta}
        if target is not None:
            values["target"] = target
        return self._fill(values, f"{a.id}+{b.id}")

    def _fill(self, values: dict, uid: str) -> str:
        try:
            return self.instruction.format(**values)
        except KeyError as exc:
            raise DataError(
                f"unit {uid!r}: placeholder {exc.args[0]!r} cannot be resolved"
            )


@dataclass(frozen=True)
class DecodingControls:
    temperature: float = 0.0
    max_output_tokens: Optional[int] = None  # default: longest label
    label_bias: tuple[tuple[str, int], ...] = ()
    stop: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError("temperature must be non-negative")
        if self.max_output_tokens is not None and self.max_output_tokens < 1:
            raise ConfigError("max_output_tokens must be >= 1")

    @classmethod
    def for_variable(cls, variable: Variable) -> "DecodingControls":
        """Classification defaults: temperature 0, output capped at the
        longest label, every level biased up with weight 100."""
        max_tokens = max(approx_tokens(l) for l in variable.labels)
        return cls(
            temperature=0.0,
            max_output_tokens=max_tokens,
            label_bias=tuple((l, 100) for l in variable.labels),
        )

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "label_bias": [list(b) for b in self.label_bias],
            "stop": list(self.stop),
        }


@dataclass(frozen=True)
class ModelReply:
    kind: str  # "text" | "refusal" | "transport_error"
    content: str

    @classmethod
    def text(cls, content: str) -> "ModelReply":
        return cls("text", content)

    @classmethod
    def refusal(cls, reason: str) -> "ModelReply":
        return cls("refusal", reason)

    @classmethod
    def transport_error(cls, kind: str) -> "ModelReply":
        return cls("transport_error", kind)


class AuditLog:
    """Append-only JSONL log of raw requests and responses."""

    def __init__(self, path: Optional[Union[str, Path]]):
        self.path = Path(path) if path else None

    def record(self, entry: dict) -> None:
        if self.path is None:
            return
        entry = {"ts": run_timestamp(), **entry}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


class ChatCompletionClient:
    """Chat-completion-style HTTP endpoint.

    POSTs a JSON document with model name, message list, temperature, max
    output tokens and a string-keyed bias map; authenticates with a bearer
    token read from the environment variable named in the config.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        auth_env: str = "QUANTITIZE_API_TOKEN",
        timeout: float = 60.0,
        audit: Optional[AuditLog] = None,
        session: Optional[requests.Session] = None,
    ):
        token = os.environ.get(auth_env)
        if not token:
            raise ConfigError(
                f"auth environment variable {auth_env!r} is not set"
            )
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.audit = audit or AuditLog(None)
        self.session = session or requests.Session()
        self.session.headers["Authorization"] = f"Bearer {token}"
        self.identifier = f"{base_url}#{model}"

    def build_request(self, prompt: str, controls: DecodingControls) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": controls.temperature,
        }
        if controls.max_output_tokens is not None:
            body["max_tokens"] = controls.max_output_tokens
        if controls.label_bias:
            body["logit_bias"] = {label: w for label, w in controls.label_bias}
        if controls.stop:
            body["stop"] = list(controls.stop)
        return body

    def send(
        self,
        prompt: str,
        controls: DecodingControls,
        unit_ids: Sequence[str] = (),
    ) -> ModelReply:
        body = self.build_request(prompt, controls)
        try:
            resp = self.session.post(
                f"{self.base_url}/chat/completions", json=body, timeout=self.timeout
            )
        except requests.RequestException as exc:
            self.audit.record({"request": body, "error": str(exc)})
            return ModelReply.transport_error(type(exc).__name__)
        self.audit.record({"request": body, "status": resp.status_code,
                           "response": resp.text})
        if resp.status_code >= 500 or resp.status_code == 429:
            return ModelReply.transport_error(f"http_{resp.status_code}")
        if resp.status_code >= 400:
            raise ConfigError(
                f"endpoint rejected the request ({resp.status_code}): {resp.text[:500]}"
            )
        try:
            doc = resp.json()
            message = doc["choices"][0]["message"]
        except (ValueError, KeyError, IndexError):
            return ModelReply.transport_error("malformed_response")
        if message.get("refusal"):
            return ModelReply.refusal(str(message["refusal"]))
        return ModelReply.text(str(message.get("content", "")))


class MockModel:
    """Deterministic offline stand-in for a model endpoint.

    ``rules`` mode maps the first keyword found in the prompt to a label;
    ``gold_corruption`` mode emits each unit's gold label pushed through a
    confusion-style corruption matrix, with a per-unit random stream derived
    from (seed, unit id) so results do not depend on batching or scheduling.
    """

    def __init__(
        self,
        mode: str,
        rules: Optional[dict[str, str]] = None,
        labels: Optional[Sequence[str]] = None,
        matrix: Optional[np.ndarray] = None,
        gold: Optional[dict[str, str]] = None,
        seed: int = 0,
        refuse_units: Sequence[str] = (),
    ):
        if mode not in ("rules", "gold_corruption"):
            raise ConfigError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.rules = rules or {}
        self.seed = seed
        self.refuse_units = set(refuse_units)
        self.identifier = f"mock-{mode}-seed{seed}"
        if mode == "gold_corruption":
            if labels is None or matrix is None or gold is None:
                raise ConfigError(
                    "gold_corruption needs labels, a corruption matrix and gold labels"
                )
            matrix = np.asarray(matrix, dtype=float)
            if matrix.shape != (len(labels), len(labels)):
                raise ConfigError("corruption matrix shape does not match labels")
            if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
                raise ConfigError("corruption matrix rows must sum to 1")
            self.labels = tuple(labels)
            self.matrix = matrix
            self.gold = dict(gold)

    @classmethod
    def from_corpus(
        cls,
        corpus: Corpus,
        variable: Variable,
        matrix: np.ndarray,
        seed: int = 0,
        refuse_units: Sequence[str] = (),
    ) -> "MockModel":
        gold = {}
        for u in corpus:
            if u.gold is None or variable.name not in u.gold:
                raise ConfigError(
                    f"gold_corruption mock requires gold labels; unit {u.id!r} has none"
                )
            gold[u.id] = u.gold[variable.name]
        return cls(
            "gold_corruption",
            labels=variable.labels,
            matrix=matrix,
            gold=gold,
            seed=seed,
            refuse_units=refuse_units,
        )

    def _label_for(self, unit_id: str) -> str:
        gold = self.gold[unit_id]
        i = self.labels.index(gold)
        digest = hashlib.sha256(f"{self.seed}:{unit_id}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        return str(rng.choice(self.labels, p=self.matrix[i]))

    def send(
        self,
        prompt: str,
        controls: DecodingControls,
        unit_ids: Sequence[str] = (),
    ) -> ModelReply:
        if any(uid in self.refuse_units for uid in unit_ids):
            return ModelReply.refusal("mock refusal")
        if self.mode == "rules":
            lower = prompt.lower()
            for keyword, label in self.rules.items():
                if keyword.lower() in lower:
                    answer = label
                    break
            else:
                answer = ""
            if len(unit_ids) > 1:
                return ModelReply.text(
                    "\n".join(f"{i + 1}. {answer}" for i in range(len(unit_ids)))
                )
            return ModelReply.text(answer)
        if not unit_ids:
            raise ConfigError("gold_corruption mock needs unit ids")
        if len(unit_ids) == 1:
            return ModelReply.text(self._label_for(unit_ids[0]))
        lines = [f"{i + 1}. {self._label_for(uid)}" for i, uid in enumerate(unit_ids)]
        return ModelReply.text("\n".join(lines))


# --- output normalization --------------------------------------------------

_STRIP_CHARS = string.whitespace + string.punctuation + "‘’“”"


def normalize_output(raw: str, variable: Variable) -> str:
    """Map a raw model response onto a declared level.

    Trims whitespace and punctuation, case-folds, then tries an exact match
    and finally a unique case-folded prefix match; anything else is
    Unparseable.
    """
    if variable.kind not in ("categorical", "ordinal"):
        raise ConfigError(f"cannot normalize against {variable.kind} variable")
    cleaned = raw.strip(_STRIP_CHARS).casefold()
    if not cleaned:
        return UNPARSEABLE
    for label in variable.labels:
        if cleaned == label.strip(_STRIP_CHARS).casefold():
            return label
    prefix_hits = [
        label
        for label in variable.labels
        if label.strip(_STRIP_CHARS).casefold().startswith(cleaned)
    ]
    if len(prefix_hits) == 1:
        return prefix_hits[0]
    return UNPARSEABLE


def extract_pairs(
    raw: str,
    stoplist: Sequence[str] = (),
    min_name_len: int = 2,
) -> tuple[set[frozenset[str]], int]:
    """Parse tab-separated name pairs from line-oriented output.

    Returns the set of unordered pairs plus a count of skipped malformed
    lines. Self-pairs, stoplisted names and too-short names are dropped.
    """
    stop = {s.casefold() for s in stoplist}
    pairs: set[frozenset[str]] = set()
    skipped = 0
    for line in raw.splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 2:
            skipped += 1
            continue
        a = re.sub(r"\s+", " ", fields[0]).strip()
        b = re.sub(r"\s+", " ", fields[1]).strip()
        if not a or not b or a == b:
            continue
        if len(a) < min_name_len or len(b) < min_name_len:
            continue
        if a.casefold() in stop or b.casefold() in stop:
            continue
        pairs.add(frozenset((a, b)))
    return pairs, skipped


# --- annotation run --------------------------------------------------------


@dataclass(frozen=True)
class AnnotatePolicy:
    max_retries: int = 3
    backoff: float = 0.5  # seconds, doubled per retry
    batch_size: int = 1
    max_in_flight: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class AnnotationRecord:
    unit_id: str
    variable: str
    raw: str
    label: Optional[str]  # None when refused/unparseable
    status: str  # "ok" | "refused" | "unparseable"
    attempts: int

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "variable": self.variable,
            "raw": self.raw,
            "label": self.label,
            "status": self.status,
            "attempts": self.attempts,
        }


@dataclass(frozen=True)
class AnnotationSet:
    records: tuple[AnnotationRecord, ...]
    manifest: dict

    def __post_init__(self):
        keys = [(r.unit_id, r.variable) for r in self.records]
        if len(set(keys)) != len(keys):
            raise DataError("duplicate (unit, variable) record")
        if not self.manifest:
            raise DataError("annotation set requires a manifest")

    def labels(self) -> dict[str, Optional[str]]:
        return {r.unit_id: r.label for r in self.records}

    def record_for(self, unit_id: str) -> AnnotationRecord:
        for r in self.records:
            if r.unit_id == unit_id:
                return r
        raise DataError(f"no record for unit {unit_id!r}")

    def counts_by_status(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.status] = out.get(r.status, 0) + 1
        return out

    def save(self, path: Union[str, Path], manifest_path: Optional[Union[str, Path]] = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        if manifest_path is not None:
            with open(manifest_path, "w", encoding="utf-8") as fh:
                json.dump(self.manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")

    @classmethod
    def load(cls, path: Union[str, Path], manifest_path: Optional[Union[str, Path]] = None) -> "AnnotationSet":
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                records.append(AnnotationRecord(**d))
        manifest = {"source": str(path)}
        if manifest_path is not None:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        return cls(tuple(records), manifest)


_BATCH_LINE = re.compile(r"^\s*(\d+)[.):]\s*(.*)$")


def _parse_batch(raw: str, n: int) -> Optional[list[str]]:
    """Parse "1. <label>" lines; None when the count does not match."""
    answers: dict[int, str] = {}
    for line in raw.splitlines():
        m = _BATCH_LINE.match(line)
        if m:
            answers[int(m.group(1))] = m.group(2)
    if set(answers) != set(range(1, n + 1)):
        return None
    return [answers[i] for i in range(1, n + 1)]


def _call_with_retry(client, prompt, controls, unit_ids, policy, sleep=time.sleep):
    """Send one prompt, retrying transport errors with exponential backoff."""
    attempts = 0
    delay = policy.backoff
    while True:
        attempts += 1
        reply = client.send(prompt, controls, unit_ids=unit_ids)
        if reply.kind != "transport_error":
            return reply, attempts
        if attempts > policy.max_retries:
            return reply, attempts
        log.warning("transport error (%s), retry %d/%d", reply.content,
                    attempts, policy.max_retries)
        sleep(delay)
        delay *= 2


def _record_from_reply(unit_id, variable, reply, attempts):
    if reply.kind == "refusal":
        return AnnotationRecord(unit_id, variable.name, reply.content, None,
                                "refused", attempts)
    if reply.kind == "transport_error":
        return AnnotationRecord(unit_id, variable.name, reply.content, None,
                                "unparseable", attempts)
    label = normalize_output(reply.content, variable)
    if label == UNPARSEABLE:
        return AnnotationRecord(unit_id, variable.name, reply.content, None,
                                "unparseable", attempts)
    return AnnotationRecord(unit_id, variable.name, reply.content, label,
                            "ok", attempts)


def annotate(
    corpus: Corpus,
    template: PromptTemplate,
    client,
    scheme: CodingScheme,
    policy: AnnotatePolicy = AnnotatePolicy(),
    controls: Optional[DecodingControls] = None,
    seed: int = 0,
    sleep=time.sleep,
) -> AnnotationSet:
    """Annotate every unit of the corpus for the template's variable.

    Batching packs numbered unit texts into one prompt and expects numbered
    answers; a count mismatch falls back to per-unit calls. Results are
    assembled in unit order, so output does not depend on completion order.
    """
    variable = scheme.variable(template.variable)
    if controls is None:
        controls = DecodingControls.for_variable(variable)

    units = list(corpus)
    batches = [
        units[i : i + policy.batch_size]
        for i in range(0, len(units), policy.batch_size)
    ]

    def run_single(unit: Unit) -> AnnotationRecord:
        prompt = template.render(unit)
        reply, attempts = _call_with_retry(
            client, prompt, controls, [unit.id], policy, sleep=sleep
        )
        return _record_from_reply(unit.id, variable, reply, attempts)

    def run_batch(batch: list[Unit]) -> list[AnnotationRecord]:
        if len(batch) == 1:
            return [run_single(batch[0])]
        numbered = "\n\n".join(
            f"{i + 1}. {u.text}" for i, u in enumerate(batch)
        )
        class _Blank(dict):
            def __missing__(self, key):
                return ""

        prompt = template.instruction.format_map(_Blank(text=numbered))
        ids = [u.id for u in batch]
        reply, attempts = _call_with_retry(client, prompt, controls, ids, policy,
                                           sleep=sleep)
        if reply.kind == "text":
            answers = _parse_batch(reply.content, len(batch))
            if answers is not None:
                return [
                    _record_from_reply(u.id, variable, ModelReply.text(a), attempts)
                    for u, a in zip(batch, answers)
                ]
            log.warning("batch answer count mismatch; retrying units singly")
        return [run_single(u) for u in batch]

    if policy.max_in_flight > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=policy.max_in_flight) as pool:
            results = list(pool.map(run_batch, batches))
    else:
        results = [run_batch(b) for b in batches]

    records = tuple(r for batch in results for r in batch)
    manifest = {
        "template": template.instruction,
        "variable": template.variable,
        "model": getattr(client, "identifier", type(client).__name__),
        "decoding": controls.to_dict(),
        "policy": {
            "max_retries": policy.max_retries,
            "backoff": policy.backoff,
            "batch_size": policy.batch_size,
            "max_in_flight": policy.max_in_flight,
        },
        "seed": seed,
        "scheme_version": scheme.version,
        "n_units": len(units),
        "timestamp": run_timestamp(),
    }
    return AnnotationSet(records, manifest)
