"""Data model and ingestion for text units, coding schemes and gold labels.

A corpus is an ordered collection of units: one analyzable text fragment
each, with optional grouping ids (respondent, source), scalar metadata
(year, title) and optional gold labels keyed by variable name. A coding
scheme declares the variables and their levels; gold labels are validated
against it at ingestion time.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import yaml

from .errors import ConfigError, DataError

Scalar = Union[str, int, float, bool]

VARIABLE_KINDS = ("categorical", "ordinal", "numeric", "open")


@dataclass(frozen=True)
class Level:
    label: str
    definition: str = ""


@dataclass(frozen=True)
class Variable:
    """One variable of a coding scheme.

    For categorical/ordinal kinds, ``levels`` is the ordered list of
    admissible labels with their definitions; the declared order is the
    ordinal order. ``catch_all`` optionally names the level that collects
    leftovers (e.g. a "Misc" topic).
    """

    name: str
    kind: str
    levels: tuple[Level, ...] = ()
    catch_all: Optional[str] = None

    def __post_init__(self):
        if self.kind not in VARIABLE_KINDS:
            raise ConfigError(f"unknown variable kind {self.kind!r} for {self.name!r}")
        if self.kind in ("categorical", "ordinal"):
            if len(self.levels) < 2:
                raise ConfigError(
                    f"variable {self.name!r} ({self.kind}) needs at least 2 levels"
                )
            labels = [lv.label for lv in self.levels]
            if len(set(labels)) != len(labels):
                raise ConfigError(f"duplicate level labels in variable {self.name!r}")
            if self.catch_all is not None and self.catch_all not in labels:
                raise ConfigError(
                    f"catch_all {self.catch_all!r} is not a level of {self.name!r}"
                )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lv.label for lv in self.levels)


@dataclass(frozen=True)
class CodingScheme:
    variables: tuple[Variable, ...]
    version: str = "1"

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate variable names in coding scheme")

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise ConfigError(f"variable {name!r} not in scheme")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "variables": [
                {
                    "name": v.name,
                    "kind": v.kind,
                    "levels": [
                        {"label": lv.label, "definition": lv.definition}
                        for lv in v.levels
                    ],
                    **({"catch_all": v.catch_all} if v.catch_all else {}),
                }
                for v in self.variables
            ],
        }


def load_scheme(path: Union[str, Path]) -> CodingScheme:
    """Load a coding scheme from a YAML (or JSON) document."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "variables" not in doc:
        raise ConfigError(f"scheme file {path} has no 'variables' section")
    variables = []
    for vd in doc["variables"]:
        levels = tuple(
            Level(str(ld["label"]), str(ld.get("definition", "")))
            for ld in vd.get("levels", [])
        )
        variables.append(
            Variable(
                name=str(vd["name"]),
                kind=str(vd.get("kind", "categorical")),
                levels=levels,
                catch_all=vd.get("catch_all"),
            )
        )
    return CodingScheme(tuple(variables), version=str(doc.get("version", "1")))


def save_scheme(scheme: CodingScheme, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(scheme.to_dict(), fh, sort_keys=False, allow_unicode=True)


@dataclass(frozen=True)
class Unit:
    """One row of the analysis table: a text fragment plus its bookkeeping."""

    id: str
    text: str
    groups: dict[str, str] = field(default_factory=dict)
    meta: dict[str, Scalar] = field(default_factory=dict)
    gold: Optional[dict[str, str]] = None

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"unit {self.id!r} has empty text")

    def to_dict(self) -> dict:
        d = {"id": self.id, "text": self.text}
        if self.groups:
            d["groups"] = dict(self.groups)
        if self.meta:
            d["meta"] = dict(self.meta)
        if self.gold is not None:
            d["gold"] = dict(self.gold)
        return d


@dataclass(frozen=True)
class Corpus:
    units: tuple[Unit, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for u in self.units:
            if u.id in seen:
                raise DataError(f"duplicate unit id {u.id!r}")
            seen.add(u.id)

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def unit(self, uid: str) -> Unit:
        for u in self.units:
            if u.id == uid:
                return u
        raise DataError(f"no unit with id {uid!r}")


def _validate_gold(unit: Unit, scheme: CodingScheme) -> None:
    if unit.gold is None:
        return
    for var_name, label in unit.gold.items():
        var = scheme.variable(var_name)
        if var.kind in ("categorical", "ordinal") and label not in var.labels:
            raise DataError(
                f"unit {unit.id!r}: gold label {label!r} is not a level of {var_name!r}"
            )


def _synth_id(i: int) -> str:
    return f"u{i + 1:06d}"


def _unit_from_obj(obj: dict, index: int) -> Unit:
    uid = str(obj["id"]) if "id" in obj else _synth_id(index)
    gold = obj.get("gold")
    return Unit(
        id=uid,
        text=str(obj["text"]),
        groups={str(k): str(v) for k, v in obj.get("groups", {}).items()},
        meta=dict(obj.get("meta", {})),
        gold={str(k): str(v) for k, v in gold.items()} if gold is not None else None,
    )


@dataclass(frozen=True)
class CsvMapping:
    """Column-to-field mapping for CSV ingestion.

    ``meta_columns`` maps column name to a type tag ("int", "float", "str",
    "bool"); columns not mentioned anywhere are kept as string metadata.
    """

    id_column: Optional[str] = None
    text_column: str = "text"
    group_columns: dict[str, str] = field(default_factory=dict)  # role -> column
    meta_columns: dict[str, str] = field(default_factory=dict)  # column -> type
    gold_columns: dict[str, str] = field(default_factory=dict)  # variable -> column

    def coerce(self, column: str, value: str) -> Scalar:
        kind = self.meta_columns.get(column, "str")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            return value.strip().lower() in ("1", "true", "yes")
        return value


def ingest(
    path: Union[str, Path],
    format: str,
    scheme: Optional[CodingScheme] = None,
    csv_mapping: Optional[CsvMapping] = None,
    unitize_strategy: Optional["UnitizeStrategy"] = None,
) -> Corpus:
    """Read a corpus from disk.

    Supported formats: ``jsonl`` (one object per line with id, text, groups,
    meta, gold), ``csv`` (header row plus a :class:`CsvMapping`) and ``text``
    (UTF-8 plain text, split by ``unitize_strategy``). Ids missing from the
    input are synthesized as ``u000001...`` in file order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file {path} does not exist")
    units: list[Unit] = []
    if format == "jsonl":
        with open(path, "r", encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                units.append(_unit_from_obj(json.loads(line), len(units)))
        provenance = {"source": str(path), "format": "jsonl"}
    elif format == "csv":
        if csv_mapping is None:
            raise ConfigError("csv ingestion requires a column mapping")
        m = csv_mapping
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            mapped = {m.id_column, m.text_column}
            mapped |= set(m.group_columns.values())
            mapped |= set(m.gold_columns.values())
            for i, row in enumerate(reader):
                if m.text_column not in row:
                    raise ConfigError(f"csv has no column {m.text_column!r}")
                uid = row[m.id_column] if m.id_column else _synth_id(i)
                meta: dict[str, Scalar] = {}
                for col, val in row.items():
                    if col in mapped:
                        continue
                    meta[col] = m.coerce(col, val)
                for col in m.meta_columns:
                    if col in row and col not in mapped:
                        meta[col] = m.coerce(col, row[col])
                gold = {v: row[c] for v, c in m.gold_columns.items() if row.get(c)}
                units.append(
                    Unit(
                        id=str(uid),
                        text=row[m.text_column],
                        groups={r: row[c] for r, c in m.group_columns.items()},
                        meta=meta,
                        gold=gold or None,
                    )
                )
        provenance = {"source": str(path), "format": "csv"}
    elif format in ("text", "plain-text"):
        if unitize_strategy is None:
            raise ConfigError("plain-text ingestion requires a unitizing strategy")
        text = path.read_text(encoding="utf-8")
        units = unitize(text, unitize_strategy)
        provenance = {
            "source": str(path),
            "format": "text",
            "strategy": repr(unitize_strategy),
        }
    else:
        raise ConfigError(f"unknown ingestion format {format!r}")

    if not units:
        raise DataError(f"input file {path} yielded an empty corpus")
    if scheme is not None:
        for u in units:
            _validate_gold(u, scheme)
    return Corpus(tuple(units), provenance=provenance)


def save_corpus(corpus: Corpus, path: Union[str, Path]) -> None:
    """Write a corpus as JSONL, one unit object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for u in corpus.units:
            fh.write(json.dumps(u.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


# --- unitizing -------------------------------------------------------------


def approx_tokens(text: str) -> int:
    """Model-agnostic token count heuristic: one token per 4 characters."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class Paragraph:
    pass


@dataclass(frozen=True)
class SentenceSplit:
    pass


@dataclass(frozen=True)
class Window:
    size: int  # approximate tokens per unit
    merge_below: int = 0

    def __post_init__(self):
        if self.size <= 0:
            raise ConfigError("window size must be positive")


@dataclass(frozen=True)
class Scene:
    marker: str  # regex matched at line start, e.g. r"INT\.|EXT\."
    merge_below: int = 0


UnitizeStrategy = Union[Paragraph, SentenceSplit, Window, Scene]


def _merge_short(segments: list[str], merge_below: int) -> list[str]:
    """Merge segments under the token floor into their successor.

    The last segment, if still short, merges backward instead.
    """
    if merge_below <= 0:
        return [s for s in segments if s]
    out: list[str] = []
    carry = ""
    for seg in segments:
        seg = carry + seg
        carry = ""
        if approx_tokens(seg.strip()) < merge_below:
            carry = seg
        else:
            out.append(seg)
    if carry:
        if out:
            out[-1] = out[-1] + carry
        else:
            out.append(carry)
    return out


def _window_chunks(text: str, max_chars: int) -> list[str]:
    # Greedy packing on whitespace boundaries; overlong unbroken runs are
    # hard-split so no chunk exceeds max_chars.
    pieces = re.split(r"(\s+)", text)
    chunks: list[str] = []
    cur = ""
    for piece in pieces:
        if len(cur) + len(piece) <= max_chars or not cur.strip():
            cur += piece
            while len(cur) > max_chars:
                chunks.append(cur[:max_chars])
                cur = cur[max_chars:]
        else:
            chunks.append(cur)
            cur = piece
            while len(cur) > max_chars:
                chunks.append(cur[:max_chars])
                cur = cur[max_chars:]
    if cur:
        chunks.append(cur)
    return chunks


def unitize(text: str, strategy: UnitizeStrategy) -> list[Unit]:
    """Split raw text into units; concatenating unit texts restores the input
    up to the whitespace consumed at split points."""
    if not text.strip():
        return []
    if isinstance(strategy, Paragraph):
        segments = re.split(r"\n\s*\n", text)
        segments = [s for s in segments if s.strip()]
    elif isinstance(strategy, SentenceSplit):
        segments = re.split(r"(?<=[.!?])\s+", text)
        segments = [s for s in segments if s.strip()]
    elif isinstance(strategy, Window):
        segments = _window_chunks(text, max_chars=strategy.size * 4)
        segments = _merge_short(segments, strategy.merge_below)
    elif isinstance(strategy, Scene):
        pattern = re.compile(rf"(?m)^(?={strategy.marker})")
        segments = [s for s in pattern.split(text) if s.strip()]
        segments = _merge_short(segments, strategy.merge_below)
    else:
        raise ConfigError(f"unknown unitize strategy {strategy!r}")
    return [Unit(id=_synth_id(i), text=seg) for i, seg in enumerate(segments)]


def sample_units(
    corpus: Union[Corpus, Sequence[Unit]],
    n: int,
    seed: int,
    with_replacement: bool = False,
) -> list[Unit]:
    """Uniform seeded sample of units; reproducible for equal arguments."""
    units = list(corpus)
    if n < 1:
        raise DataError("sample size must be >= 1")
    if not with_replacement and n > len(units):
        raise DataError(
            f"cannot sample {n} units from {len(units)} without replacement"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(units), size=n, replace=with_replacement)
    return [units[i] for i in idx]
