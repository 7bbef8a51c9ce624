"""Archive ingestion: parse source manifests into normalized Recording rows,
fill in missing species names from a lookup table, and build train/test splits.

Per-source manifest schemas (column names) are documented in
docs/manifest-schemas.md. The normalized output format is JSONL, one
recording per line, UTF-8.
"""

from __future__ import annotations

import csv
import json
import math
import random
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Optional

SOURCES = ("inaturalist", "xenocanto", "watkins", "asa", "audiocaps", "synthetic")

# Sentinel for absent date/time/location when checking split collisions.
# Two records that are "unknown" in all three fields are treated as colliding.
UNKNOWN = "unknown"

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_TIME_RE = re.compile(r"^\d{1,2}:\d{2}(:\d{2})?$")


class IngestError(Exception):
    pass


class MalformedManifest(IngestError):
    """Structurally broken manifest: bad header, bad JSON line, or a row whose
    cell count does not match the header."""


class UnknownSource(IngestError):
    pass


class EmptyCorpus(IngestError):
    pass


@dataclass
class Recording:
    id: str
    source: str
    species_common: Optional[str] = None
    species_scientific: Optional[str] = None
    notes: Optional[str] = None
    call_type: Optional[str] = None
    behavior: Optional[str] = None
    background_species: list[str] = field(default_factory=list)
    num_animals: Optional[int] = None
    recorded_date: Optional[str] = None  # ISO YYYY-MM-DD
    recorded_time: Optional[str] = None  # HH:MM[:SS]
    location: Optional[str] = None
    audio_path: str = ""
    license: str = ""

    def species_key(self) -> Optional[str]:
        """Canonical species identity: scientific name when present, else common."""
        name = self.species_scientific or self.species_common
        return name.casefold() if name else None

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v not in (None, [])}
        if not self.background_species:
            d.pop("background_species", None)
        return json.dumps(d, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Recording":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class RowIssue:
    """One problem found while parsing a manifest row.

    action is "dropped" when the row was excluded from the output and
    "field_cleared" when only the offending optional field was discarded.
    """

    line: int
    field: str
    message: str
    action: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


@dataclass
class CorpusSplit:
    train_ids: set[str]
    test_ids: set[str]

    def save(self, path: str | Path) -> None:
        payload = {"train": sorted(self.train_ids), "test": sorted(self.test_ids)}
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusSplit":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(train_ids=set(payload["train"]), test_ids=set(payload["test"]))


def _clean(value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    value = value.strip()
    return value or None


def _path_under_root(audio_path: str) -> bool:
    """Relative, no parent-directory escapes: the path must resolve under
    whatever corpus root it is later joined to."""
    path = Path(audio_path)
    return not path.is_absolute() and ".." not in path.parts


def _split_list(value: Optional[str]) -> list[str]:
    if not value:
        return []
    return [part.strip() for part in value.split(";") if part.strip()]


# Required columns per CSV source. JSONL sources validate per line.
_CSV_COLUMNS = {
    "inaturalist": ["id", "common_name", "scientific_name", "notes", "observed_date",
                    "observed_time", "location", "audio_path", "license"],
    "xenocanto": ["id", "common_name", "scientific_name", "call_type", "behavior",
                  "background_species", "num_animals", "date", "time", "location",
                  "audio_path", "license"],
    "audiocaps": ["id", "caption", "audio_path", "license"],
}


def _row_to_recording(row: dict, source: str, line: int,
                      issues: list[RowIssue]) -> Optional[Recording]:
    """Map one raw manifest row onto a Recording, collecting per-field issues.

    Returns None when a required field is unusable (the row is dropped and
    reported); soft failures clear the field and keep the row.
    """
    rid = _clean(row.get("id"))
    audio_path = _clean(row.get("audio_path"))
    if not rid:
        issues.append(RowIssue(line, "id", "missing id", "dropped"))
        return None
    if not audio_path:
        issues.append(RowIssue(line, "audio_path", "missing audio_path", "dropped"))
        return None
    if not _path_under_root(audio_path):
        issues.append(RowIssue(
            line, "audio_path",
            f"{audio_path!r} must be relative and stay under the corpus root",
            "dropped"))
        return None

    common = _clean(row.get("common_name"))
    scientific = _clean(row.get("scientific_name"))
    if source == "audiocaps":
        notes = _clean(row.get("caption"))
        if not notes:
            issues.append(RowIssue(line, "caption", "missing caption", "dropped"))
            return None
    else:
        notes = _clean(row.get("notes"))
        if not common and not scientific:
            issues.append(RowIssue(
                line, "species", "missing both common and scientific name", "dropped"))
            return None

    date_key = "observed_date" if source == "inaturalist" else "date"
    time_key = "observed_time" if source == "inaturalist" else "time"
    date = _clean(row.get(date_key))
    if date and not _DATE_RE.match(date):
        issues.append(RowIssue(line, date_key, f"bad date {date!r}", "field_cleared"))
        date = None
    time = _clean(row.get(time_key))
    if time and not _TIME_RE.match(time):
        issues.append(RowIssue(line, time_key, f"bad time {time!r}", "field_cleared"))
        time = None

    num_animals = None
    raw_num = _clean(row.get("num_animals"))
    if raw_num:
        try:
            num_animals = int(raw_num)
            if num_animals < 1:
                raise ValueError
        except ValueError:
            issues.append(RowIssue(
                line, "num_animals", f"bad num_animals {raw_num!r}", "field_cleared"))
            num_animals = None

    call_type = _clean(row.get("signal_type")) if source == "watkins" \
        else _clean(row.get("call_type"))

    return Recording(
        id=rid,
        source=source,
        species_common=common,
        species_scientific=scientific,
        notes=notes,
        call_type=call_type,
        behavior=_clean(row.get("behavior")),
        background_species=_split_list(row.get("background_species")),
        num_animals=num_animals,
        recorded_date=date,
        recorded_time=time,
        location=_clean(row.get("location")),
        audio_path=audio_path,
        license=_clean(row.get("license")) or "",
    )


def parse_manifest(path: str | Path,
                   source: str) -> tuple[list[Recording], list[RowIssue]]:
    """Parse one source manifest into Recordings plus a row-issue report.

    Rows with unusable required fields are reported, never silently dropped.
    Raises MalformedManifest for structural problems and UnknownSource for an
    unrecognized source name.
    """
    if source not in SOURCES:
        raise UnknownSource(f"unknown source {source!r}; expected one of {SOURCES}")
    path = Path(path)
    records: list[Recording] = []
    issues: list[RowIssue] = []
    seen_ids: set[str] = set()

    if source in _CSV_COLUMNS:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                return [], []  # empty file -> empty corpus
            missing = [c for c in _CSV_COLUMNS[source] if c not in header]
            if missing:
                raise MalformedManifest(
                    f"{path}: header missing columns {missing} for source {source!r}")
            for line_no, cells in enumerate(reader, start=2):
                if not cells:
                    continue
                if len(cells) != len(header):
                    raise MalformedManifest(
                        f"{path}:{line_no}: row has {len(cells)} cells, "
                        f"header has {len(header)}")
                row = dict(zip(header, cells))
                rec = _row_to_recording(row, source, line_no, issues)
                if rec is not None:
                    _register(rec, seen_ids, records, issues, line_no)
    else:  # watkins / asa / synthetic are JSONL
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedManifest(f"{path}:{line_no}: bad JSON: {exc}") from exc
                if not isinstance(row, dict):
                    raise MalformedManifest(f"{path}:{line_no}: row is not an object")
                if source == "synthetic":
                    # synthetic manifests are already in the normalized schema
                    try:
                        rec = Recording.from_dict({"source": "synthetic", **row})
                    except (TypeError, ValueError) as exc:
                        issues.append(RowIssue(line_no, "row", str(exc), "dropped"))
                        continue
                    if not rec.species_common and not rec.species_scientific:
                        issues.append(RowIssue(
                            line_no, "species",
                            "missing both common and scientific name", "dropped"))
                        continue
                    if not _path_under_root(rec.audio_path):
                        issues.append(RowIssue(
                            line_no, "audio_path",
                            f"{rec.audio_path!r} must be relative and stay "
                            "under the corpus root", "dropped"))
                        continue
                    _register(rec, seen_ids, records, issues, line_no)
                else:
                    rec = _row_to_recording(
                        {k: (v if v is None else str(v)) for k, v in row.items()},
                        source, line_no, issues)
                    if rec is not None:
                        _register(rec, seen_ids, records, issues, line_no)
    return records, issues


def _register(rec: Recording, seen: set[str], records: list[Recording],
              issues: list[RowIssue], line: int) -> None:
    if rec.id in seen:
        issues.append(RowIssue(line, "id", f"duplicate id {rec.id!r}", "dropped"))
        return
    seen.add(rec.id)
    records.append(rec)


def write_normalized(records: Iterable[Recording], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_normalized(path: str | Path) -> list[Recording]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(Recording.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise MalformedManifest(f"{path}:{line_no}: {exc}") from exc
    return records


def write_issues(issues: Iterable[RowIssue], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for issue in issues:
            fh.write(issue.to_json() + "\n")


class SpeciesNameTable:
    """Bidirectional scientific <-> common name lookup.

    Keys match case-insensitively; stored spellings are returned as-is.
    """

    def __init__(self, pairs: Iterable[tuple[str, str]]):
        self._sci_to_common: dict[str, str] = {}
        self._common_to_sci: dict[str, str] = {}
        for scientific, common in pairs:
            self._sci_to_common[scientific.casefold()] = common
            self._common_to_sci[common.casefold()] = scientific

    @classmethod
    def from_csv(cls, path: str | Path) -> "SpeciesNameTable":
        pairs = []
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or \
                    not {"scientific_name", "common_name"} <= set(reader.fieldnames):
                raise MalformedManifest(
                    f"{path}: name table needs scientific_name,common_name columns")
            for row in reader:
                sci, common = _clean(row["scientific_name"]), _clean(row["common_name"])
                if sci and common:
                    pairs.append((sci, common))
        return cls(pairs)

    def common_for(self, scientific: str) -> Optional[str]:
        return self._sci_to_common.get(scientific.casefold())

    def scientific_for(self, common: str) -> Optional[str]:
        return self._common_to_sci.get(common.casefold())

    def __len__(self) -> int:
        return len(self._sci_to_common)


@dataclass
class MappingReport:
    filled_common: int = 0
    filled_scientific: int = 0
    unmapped: list[str] = field(default_factory=list)  # record ids left one-sided


def map_species_names(records: list[Recording],
                      table: SpeciesNameTable) -> tuple[list[Recording], MappingReport]:
    """Fill in the missing name form wherever the table knows it.

    Existing names are never overwritten; records the table cannot complete
    are left unchanged and listed in the report.
    """
    report = MappingReport()
    out = []
    for rec in records:
        common, scientific = rec.species_common, rec.species_scientific
        if scientific and not common:
            found = table.common_for(scientific)
            if found:
                common = found
                report.filled_common += 1
            else:
                report.unmapped.append(rec.id)
        elif common and not scientific:
            found = table.scientific_for(common)
            if found:
                scientific = found
                report.filled_scientific += 1
            else:
                report.unmapped.append(rec.id)
        if common is not rec.species_common or scientific is not rec.species_scientific:
            rec = Recording(**{**asdict(rec), "species_common": common,
                               "species_scientific": scientific})
        out.append(rec)
    return out, report


def _collision_triple(rec: Recording) -> tuple[str, str, str]:
    return (rec.recorded_date or UNKNOWN,
            rec.recorded_time or UNKNOWN,
            rec.location or UNKNOWN)


def build_species_split(records: list[Recording], min_count: int = 70,
                        test_fraction: float = 0.10, seed: int = 0) -> CorpusSplit:
    """Sample a held-out test set from species with at least min_count records.

    Candidates are drawn uniformly without replacement over the pooled
    eligible records; a candidate only enters the test set if no train record
    of the same species shares its (date, time, location) triple. Rejected
    candidates stay in train, so test_fraction is an upper bound.
    """
    if not records:
        raise EmptyCorpus("cannot split an empty corpus")
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError(f"test_fraction must be in [0, 1], got {test_fraction}")

    by_species: dict[str, list[Recording]] = {}
    for rec in records:
        key = rec.species_key()
        if key is not None:
            by_species.setdefault(key, []).append(rec)

    eligible = [rec for recs in by_species.values() if len(recs) >= min_count
                for rec in recs]
    eligible.sort(key=lambda r: r.id)
    n_test = math.floor(test_fraction * len(eligible) + 0.5)
    rng = random.Random(seed)
    candidates = rng.sample(eligible, n_test) if n_test else []
    candidate_ids = {rec.id for rec in candidates}

    # Triples of records that are guaranteed to stay in train (non-candidates).
    # Comparing candidates only against this static set keeps accept/reject
    # decisions consistent: two sampled records with equal triples either both
    # enter test or both stay in train, so no test/train collision survives.
    train_triples: dict[str, set[tuple[str, str, str]]] = {}
    for rec in records:
        key = rec.species_key()
        if key is not None and rec.id not in candidate_ids:
            train_triples.setdefault(key, set()).add(_collision_triple(rec))

    test_ids = set()
    for rec in candidates:
        key = rec.species_key()
        if _collision_triple(rec) not in train_triples.get(key, set()):
            test_ids.add(rec.id)
    train_ids = {rec.id for rec in records} - test_ids
    return CorpusSplit(train_ids=train_ids, test_ids=test_ids)
