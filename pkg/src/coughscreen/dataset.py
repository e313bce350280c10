"""Manifest ingestion, labeling rules, clinical flags, and data splits.

Each public dataset ships its own CSV schema; loaders normalize them to
:class:`SampleRecord` lists. The processed interchange format is JSON
lines, one record per line.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"

COSWARA_POSITIVE_STATUSES = frozenset(
    {"positive_mild", "positive_moderate", "positive_asymp"}
)
COUGHVID_POSITIVE_STATUS = "COVID-19 Positive"
COUGHVID_NEGATIVE_CAP = 1000

# Canonical vocabulary for the two aggregated clinical flags. Matching is
# case-insensitive; unknown strings are kept in metadata but never set a flag.
RESPIRATORY_CONDITIONS = frozenset(
    {"asthma", "chronic tuberculosis", "copd", "chronic lung disease", "pneumonia"}
)
FEVER_MYALGIA_SYMPTOMS = frozenset({"fever and/or chills", "myalgia"})


class DatasetError(Exception):
    pass


class MissingColumn(DatasetError):
    pass


class UnknownPcrValue(DatasetError):
    pass


class TooFewRecords(DatasetError):
    pass


class SingleClass(DatasetError):
    """Only one label present; AUC is undefined downstream."""


@dataclass(frozen=True)
class ClinicalFlags:
    respiratory_condition: int
    fever_or_myalgia: int

    def __post_init__(self):
        if self.respiratory_condition not in (0, 1) or self.fever_or_myalgia not in (0, 1):
            raise ValueError("flags must be 0 or 1")

    def pattern(self) -> str:
        return f"{self.respiratory_condition}{self.fever_or_myalgia}"


@dataclass
class SampleRecord:
    id: str
    audio_path: str
    label: str
    source: str
    symptoms: frozenset = frozenset()
    conditions: frozenset = frozenset()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad label {self.label!r}")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1.0")


def _split_multi(value: str) -> frozenset:
    """Split a semicolon-separated cell into a lowercase set."""
    parts = (p.strip().lower() for p in value.split(";"))
    return frozenset(p for p in parts if p)


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _require(rows: list[dict], path, *columns: str):
    if not rows:
        return
    present = rows[0].keys()
    for col in columns:
        if col not in present:
            raise MissingColumn(f"{path}: missing column {col!r}")


def _meta_from(row: dict) -> dict:
    meta = {}
    for key in ("age", "sex", "smoker"):
        if row.get(key):
            meta[key] = row[key]
    return meta


def load_coswara(manifest_path, audio_root) -> list[SampleRecord]:
    """Load a Coswara-style manifest.

    Statuses positive_mild / positive_moderate / positive_asymp map to the
    positive class; every other status is negative. Only the shallow-cough
    recording of each subject is referenced; rows whose shallow-cough file
    is missing are skipped with a logged warning count.
    """
    rows = _read_csv(manifest_path)
    _require(rows, manifest_path, "id", "covid_status")
    root = Path(audio_root)
    records = []
    missing_audio = 0
    for row in rows:
        path = root / row["id"] / "cough-shallow.wav"
        if not path.is_file():
            missing_audio += 1
            continue
        label = POSITIVE if row["covid_status"] in COSWARA_POSITIVE_STATUSES else NEGATIVE
        records.append(
            SampleRecord(
                id=row["id"],
                audio_path=str(path),
                label=label,
                source="coswara",
                symptoms=_split_multi(row.get("symptoms", "")),
                conditions=_split_multi(row.get("conditions", "")),
                meta=_meta_from(row),
            )
        )
    if missing_audio:
        log.warning("coswara: skipped %d rows with missing audio", missing_audio)
    return records


def load_coughvid(manifest_path, audio_root, seed: int) -> list[SampleRecord]:
    """Load a Coughvid-style manifest.

    'COVID-19 Positive' rows form the positive class; up to 1,000 of the
    remaining rows are subsampled uniformly (seeded, without replacement)
    as negatives to keep the classes roughly balanced.
    """
    rows = _read_csv(manifest_path)
    _require(rows, manifest_path, "id", "status")
    root = Path(audio_root)

    def make(row, label):
        return SampleRecord(
            id=row["id"],
            audio_path=str(root / f"{row['id']}.wav"),
            label=label,
            source="coughvid",
            symptoms=_split_multi(row.get("symptoms", "")),
            conditions=_split_multi(row.get("conditions", "")),
            meta=_meta_from(row),
        )

    positives = [make(r, POSITIVE) for r in rows if r["status"] == COUGHVID_POSITIVE_STATUS]
    others = [r for r in rows if r["status"] != COUGHVID_POSITIVE_STATUS]
    rng = np.random.Generator(np.random.PCG64(seed))
    k = min(COUGHVID_NEGATIVE_CAP, len(others))
    chosen = sorted(rng.choice(len(others), size=k, replace=False).tolist())
    negatives = [make(others[i], NEGATIVE) for i in chosen]
    return positives + negatives


def load_virufy(manifest_path, audio_root) -> list[SampleRecord]:
    """Load a Virufy-style manifest with PCR ground truth.

    Rows with a blank pcr_result (untested) are excluded; values other
    than positive/negative/blank raise :class:`UnknownPcrValue`.
    """
    rows = _read_csv(manifest_path)
    _require(rows, manifest_path, "id", "pcr_result", "symptoms", "conditions")
    root = Path(audio_root)
    records = []
    for row in rows:
        pcr = row["pcr_result"].strip().lower()
        if pcr == "":
            continue
        if pcr not in (POSITIVE, NEGATIVE):
            raise UnknownPcrValue(f"pcr_result {row['pcr_result']!r} for id {row['id']}")
        records.append(
            SampleRecord(
                id=row["id"],
                audio_path=str(root / f"{row['id']}.wav"),
                label=pcr,
                source="virufy_crowd",
                symptoms=_split_multi(row["symptoms"]),
                conditions=_split_multi(row["conditions"]),
                meta=_meta_from(row),
            )
        )
    return records


def derive_flags(record: SampleRecord) -> ClinicalFlags:
    """Aggregate the two binary clinical features from a record.

    Missing symptom/condition data means absence (flag 0).
    """
    resp = int(bool(record.conditions & RESPIRATORY_CONDITIONS))
    fever = int(bool(record.symptoms & FEVER_MYALGIA_SYMPTOMS))
    return ClinicalFlags(respiratory_condition=resp, fever_or_myalgia=fever)


def _class_sizes(n: int, ratios, ideal, allocated) -> list[int]:
    """Largest-remainder cut of one class into len(ratios) parts.

    Equal remainders compete for a limited number of leftover seats, so
    ties go to the part currently furthest below its overall share
    (``ideal`` minus ``allocated``); this keeps the combined split sizes
    on target instead of piling every class's tie onto the same part.
    """
    exact = [n * r for r in ratios]
    sizes = [int(e) for e in exact]
    for _ in range(n - sum(sizes)):
        i = min(
            (j for j in range(len(ratios)) if exact[j] > sizes[j]),
            key=lambda j: (
                -(exact[j] - sizes[j]),
                allocated[j] + sizes[j] - ideal[j],
                j,
            ),
        )
        sizes[i] += 1
    return sizes


def split(records: list[SampleRecord], spec: SplitSpec):
    """Stratified 70/15/15 partition into (train, validation, test).

    Within each label class the records are shuffled with the spec seed
    and cut contiguously; sizes use largest-remainder rounding with ties
    resolved toward the globally under-filled part.
    """
    if len(records) < 10:
        raise TooFewRecords(f"need at least 10 records, got {len(records)}")
    labels = {r.label for r in records}
    if labels != {POSITIVE, NEGATIVE}:
        raise SingleClass(f"both classes required, found {sorted(labels)}")

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    ideal = [len(records) * r for r in spec.ratios]
    allocated = [0] * len(spec.ratios)
    parts: list[list[SampleRecord]] = [[], [], []]
    for label in (POSITIVE, NEGATIVE):
        group = [r for r in records if r.label == label]
        order = rng.permutation(len(group))
        shuffled = [group[i] for i in order]
        sizes = _class_sizes(len(group), spec.ratios, ideal, allocated)
        start = 0
        for i, size in enumerate(sizes):
            parts[i].extend(shuffled[start : start + size])
            allocated[i] += size
            start += size
    train, validation, test = parts
    return train, validation, test


def summarize(records: list[SampleRecord]) -> dict:
    """Count records by (source, label) and by (label, flag pattern)."""
    by_source: dict[tuple, int] = {}
    by_flags: dict[tuple, int] = {}
    for r in records:
        key = (r.source, r.label)
        by_source[key] = by_source.get(key, 0) + 1
        fkey = (r.label, derive_flags(r).pattern())
        by_flags[fkey] = by_flags.get(fkey, 0) + 1
    return {"by_source_label": by_source, "by_label_flags": by_flags}


def format_summary(summary: dict) -> str:
    lines = [f"{'source':<14}{'label':<10}{'count':>6}"]
    for (source, label), count in sorted(summary["by_source_label"].items()):
        lines.append(f"{source:<14}{label:<10}{count:>6}")
    lines.append("")
    lines.append(f"{'label':<10}{'flags':<7}{'count':>6}")
    for (label, pattern), count in sorted(summary["by_label_flags"].items()):
        lines.append(f"{label:<10}{pattern:<7}{count:>6}")
    return "\n".join(lines)


def summary_csv_rows(summary: dict) -> list[list[str]]:
    rows = [["table", "key1", "key2", "count"]]
    for (source, label), count in sorted(summary["by_source_label"].items()):
        rows.append(["source_label", source, label, str(count)])
    for (label, pattern), count in sorted(summary["by_label_flags"].items()):
        rows.append(["label_flags", label, pattern, str(count)])
    return rows


def write_jsonl(records: list[SampleRecord], path) -> None:
    """Write the processed manifest, one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            flags = derive_flags(r)
            obj = {
                "id": r.id,
                "audio_path": r.audio_path,
                "label": r.label,
                "source": r.source,
                "flags": {
                    "respiratory_condition": flags.respiratory_condition,
                    "fever_or_myalgia": flags.fever_or_myalgia,
                },
                "meta": dict(
                    r.meta,
                    symptoms=sorted(r.symptoms),
                    conditions=sorted(r.conditions),
                ),
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_jsonl(path) -> list[SampleRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            meta = dict(obj.get("meta", {}))
            symptoms = frozenset(meta.pop("symptoms", []))
            conditions = frozenset(meta.pop("conditions", []))
            records.append(
                SampleRecord(
                    id=obj["id"],
                    audio_path=obj["audio_path"],
                    label=obj["label"],
                    source=obj["source"],
                    symptoms=symptoms,
                    conditions=conditions,
                    meta=meta,
                )
            )
    return records
