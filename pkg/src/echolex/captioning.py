"""Caption generation: templates, the metadata clause grammar, the captioning
client contract, rule-based quality detectors, and the detect-and-recaption
loop that turns one Recording into a common-name and a scientific-name caption.

The clause grammar for metadata captions is documented in
docs/caption-grammar.md and pinned by tests/data/metadata_captions_golden.jsonl.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from . import prompts
from .ingest import Recording

NAME_FORMS = ("common", "scientific")
ORIGINS = ("template", "metadata_template", "llm", "llm_retry")
ISSUE_KINDS = ("location_leak", "missing_species", "empty_output", "client_error")

_VOWELS = frozenset("aeiouAEIOU")

_NUMBER_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six",
                 7: "seven", 8: "eight", 9: "nine", 10: "ten",
                 11: "eleven", 12: "twelve"}

# Coordinate mentions: "37.77N, 122.41W", "37.77° N", "-122.41, 37.8",
# "lat 37.77 lon -122.41"
_COORD_PATTERNS = (
    re.compile(r"\b\d{1,3}(?:\.\d+)?\s*°?\s*[NS]\b[\s,;]+\d{1,3}(?:\.\d+)?\s*°?\s*[EW]\b",
               re.IGNORECASE),
    re.compile(r"\b\d{1,3}(?:\.\d+)?\s*°\s*[NSEW]\b", re.IGNORECASE),
    re.compile(r"\blat(?:itude)?\s*[:=]?\s*-?\d{1,3}(?:\.\d+)?", re.IGNORECASE),
    re.compile(r"\blon(?:gitude)?g?\s*[:=]?\s*-?\d{1,3}(?:\.\d+)?", re.IGNORECASE),
    re.compile(r"-?\d{1,3}\.\d{2,},\s*-?\d{1,3}\.\d{2,}"),
)


class MissingName(Exception):
    """The recording lacks the requested species name form."""


@dataclass
class Caption:
    recording_id: str
    text: str
    name_form: str  # "common" | "scientific"
    origin: str     # "template" | "metadata_template" | "llm" | "llm_retry"

    def to_json(self) -> str:
        return json.dumps({"recordingId": self.recording_id, "text": self.text,
                           "nameForm": self.name_form, "origin": self.origin},
                          ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Caption":
        d = json.loads(line)
        return cls(recording_id=d["recordingId"], text=d["text"],
                   name_form=d["nameForm"], origin=d["origin"])


@dataclass
class CaptionIssue:
    recording_id: str
    kind: str  # one of ISSUE_KINDS; selects the recaption prompt
    detail: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


def write_captions(captions: Iterable[Caption], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for cap in captions:
            fh.write(cap.to_json() + "\n")


def load_captions(path: str | Path) -> list[Caption]:
    with Path(path).open(encoding="utf-8") as fh:
        return [Caption.from_json(line) for line in fh if line.strip()]


def _species_name(record: Recording, name_form: str) -> str:
    name = record.species_common if name_form == "common" else record.species_scientific
    if not name:
        raise MissingName(f"record {record.id} has no {name_form} species name")
    return name


def indefinite_article(name: str) -> str:
    """"an" iff the name starts with a vowel letter (A, E, I, O, U)."""
    return "an" if name and name[0] in _VOWELS else "a"


def template_caption(record: Recording, name_form: str) -> Caption:
    name = _species_name(record, name_form)
    text = f"The sound of {indefinite_article(name)} {name}"
    return Caption(record.id, text, name_form, "template")


def metadata_template_caption(record: Recording, name_form: str) -> Caption:
    """Clause-grammar caption from structured metadata (xeno-canto style rows).

    Clause order: head (call type), group size, behavior, background species.
    Absent fields are omitted without dangling connectives.
    """
    name = _species_name(record, name_form)
    call = (record.call_type or "sound").strip().lower()
    parts = [f"The {call} of {indefinite_article(name)} {name}"]
    if record.num_animals and record.num_animals >= 2:
        count = _NUMBER_WORDS.get(record.num_animals, str(record.num_animals))
        parts.append(f"from a group of {count}")
    if record.behavior:
        parts.append(f"while {record.behavior.strip().lower()}")
    if record.background_species:
        named = [f"{indefinite_article(s)} {s}" for s in record.background_species]
        if len(named) == 1:
            listed = named[0]
        else:
            listed = ", ".join(named[:-1]) + f" and {named[-1]}"
        parts.append(f"with {listed} in the background")
    return Caption(record.id, ", ".join(parts), name_form, "metadata_template")


class CaptionClientError(Exception):
    """Transport-level failure talking to the captioning model."""


@dataclass
class CaptionRequest:
    prompt_kind: str
    species_name: str
    notes: str
    metadata: dict

    def to_payload(self) -> dict:
        return {"promptKind": self.prompt_kind, "speciesName": self.species_name,
                "notes": self.notes, "metadata": self.metadata}


class CaptionClient(Protocol):
    def caption(self, request: CaptionRequest) -> str:
        """Return caption text; raise CaptionClientError on failure."""
        ...


class MockCaptionClient:
    """Deterministic scripted client for tests and offline runs.

    Each call pops the next entry from the script: a string is returned as the
    caption, an Exception instance is raised. An exhausted script repeats its
    last entry.
    """

    def __init__(self, script: Sequence[str | Exception]):
        if not script:
            raise ValueError("script must not be empty")
        self._script = list(script)
        self.calls: list[CaptionRequest] = []

    def caption(self, request: CaptionRequest) -> str:
        self.calls.append(request)
        step = self._script[min(len(self.calls) - 1, len(self._script) - 1)]
        if isinstance(step, Exception):
            raise step
        return step


class HttpCaptionClient:
    """Captioning over an HTTP JSON endpoint: POST {promptKind, speciesName,
    notes, metadata} -> {text}."""

    def __init__(self, endpoint: str, token: str = "", timeout: float = 30.0):
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout

    def caption(self, request: CaptionRequest) -> str:
        import httpx

        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        try:
            resp = httpx.post(self.endpoint, json=request.to_payload(),
                              headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return str(resp.json().get("text", ""))
        except httpx.HTTPError as exc:
            raise CaptionClientError(str(exc)) from exc


class LocationDetector(Protocol):
    def find_locations(self, text: str) -> list[str]:
        ...


class RuleBasedLocationDetector:
    """Gazetteer phrases plus coordinate-pattern rules; no model downloads."""

    def __init__(self, gazetteer: Iterable[str] = prompts.GAZETTEER):
        self._patterns = [
            (place, re.compile(r"\b" + re.escape(place) + r"\b", re.IGNORECASE))
            for place in gazetteer
        ]

    def find_locations(self, text: str) -> list[str]:
        hits = [place for place, pat in self._patterns if pat.search(text)]
        for coord_pat in _COORD_PATTERNS:
            match = coord_pat.search(text)
            if match:
                hits.append(match.group(0))
        return hits


def detect_location_leak(caption: Caption,
                         detector: Optional[LocationDetector] = None
                         ) -> Optional[CaptionIssue]:
    detector = detector or RuleBasedLocationDetector()
    hits = detector.find_locations(caption.text)
    if hits:
        return CaptionIssue(caption.recording_id, "location_leak",
                            f"mentions {', '.join(hits)}")
    return None


def detect_missing_species(caption: Caption, record: Recording
                           ) -> Optional[CaptionIssue]:
    name = _species_name(record, caption.name_form)
    if name.casefold() not in caption.text.casefold():
        return CaptionIssue(caption.recording_id, "missing_species",
                            f"caption does not mention {name!r}")
    return None


def _sanitize(text: str) -> str:
    return " ".join(text.split())


def _swap_name(text: str, old: str, new: str) -> str:
    return re.sub(re.escape(old), new, text, flags=re.IGNORECASE)


@dataclass
class CaptionResult:
    captions: list[Caption]
    issues: list[CaptionIssue]
    client_calls: int


def _llm_sources() -> frozenset[str]:
    return frozenset(prompts.INITIAL_PROMPTS)


def llm_caption(record: Recording, prompt_kind: str, client: CaptionClient,
                name_form: str = "common", prompt_text: Optional[str] = None,
                origin: str = "llm") -> Caption | CaptionIssue:
    """One captioning-client call; failures come back as data, never raised."""
    species = _species_name(record, name_form)
    if prompt_text is None:
        prompt_text = prompts.INITIAL_PROMPTS[prompt_kind].format(
            species=species, notes=record.notes or "")
    request = CaptionRequest(
        prompt_kind=prompt_kind, species_name=species, notes=record.notes or "",
        metadata={"recordingId": record.id, "source": record.source,
                  "prompt": prompt_text})
    try:
        text = _sanitize(client.caption(request))
    except Exception as exc:
        return CaptionIssue(record.id, "client_error", str(exc) or type(exc).__name__)
    if not text:
        return CaptionIssue(record.id, "empty_output", "client returned empty text")
    return Caption(record.id, text, name_form, origin)


def _llm_pipeline(record: Recording, client: CaptionClient,
                  detector: LocationDetector, max_retries: int,
                  name_form: str) -> tuple[Optional[Caption], list[CaptionIssue], int]:
    """Initial call plus up to max_retries issue-specific re-prompts.

    Returns (caption or None on persistent failure, issues logged, calls made).
    """
    issues: list[CaptionIssue] = []
    calls = 0
    prompt_kind = record.source
    prompt_text: Optional[str] = None
    species = _species_name(record, name_form)
    for attempt in range(1 + max_retries):
        origin = "llm" if attempt == 0 else "llm_retry"
        result = llm_caption(record, prompt_kind, client, name_form,
                             prompt_text=prompt_text, origin=origin)
        calls += 1
        if isinstance(result, Caption):
            issue = (detect_location_leak(result, detector)
                     or detect_missing_species(result, record))
            if issue is None:
                return result, issues, calls
            caption_text = result.text
        else:
            issue = result
            caption_text = ""
        issues.append(issue)
        prompt_kind = f"retry:{issue.kind}"
        prompt_text = prompts.RETRY_PROMPTS[issue.kind].format(
            species=species, notes=record.notes or "", caption=caption_text)
    return None, issues, calls


def caption_pipeline(record: Recording, client: Optional[CaptionClient] = None,
                     detector: Optional[LocationDetector] = None,
                     max_retries: int = 2) -> CaptionResult:
    """Produce the common-name and scientific-name captions for one recording.

    Notes-bearing records from client-captioned sources go through the client
    with the detect-and-recaption loop; everything else is templated. The
    client is called at most 1 + max_retries times per record: the primary
    name form is captioned by the client and the second form is derived by
    swapping in the other species name. Persistent failures fall back to
    template captions, so the pipeline always terminates with valid captions.
    """
    detector = detector or RuleBasedLocationDetector()

    if record.source == "audiocaps":
        # human-written caption, no species names to enforce
        text = _sanitize(record.notes or "")
        if not text:
            return CaptionResult([], [CaptionIssue(
                record.id, "empty_output", "audiocaps record has no caption")], 0)
        return CaptionResult(
            [Caption(record.id, text, form, "metadata_template")
             for form in NAME_FORMS], [], 0)

    forms = [form for form in NAME_FORMS
             if (record.species_common if form == "common"
                 else record.species_scientific)]
    if not forms:
        raise MissingName(f"record {record.id} has no species name at all")

    if record.source == "xenocanto":
        return CaptionResult(
            [metadata_template_caption(record, form) for form in forms], [], 0)

    use_client = (client is not None and record.notes
                  and record.source in _llm_sources())
    if not use_client:
        return CaptionResult([template_caption(record, form) for form in forms],
                             [], 0)

    primary = "common" if "common" in forms else "scientific"
    caption, issues, calls = _llm_pipeline(record, client, detector,
                                           max_retries, primary)
    if caption is None:
        return CaptionResult([template_caption(record, form) for form in forms],
                             issues, calls)

    captions = [caption]
    if len(forms) == 2:
        other = "scientific" if primary == "common" else "common"
        swapped = _swap_name(caption.text, _species_name(record, primary),
                             _species_name(record, other))
        captions.append(Caption(record.id, swapped, other, caption.origin))
    return CaptionResult(captions, issues, calls)


def caption_corpus(records: Sequence[Recording],
                   client: Optional[CaptionClient] = None,
                   detector: Optional[LocationDetector] = None,
                   max_retries: int = 2,
                   max_in_flight: int = 1) -> tuple[list[Caption], list[CaptionIssue]]:
    """Caption every record; client calls may overlap up to max_in_flight.

    Output order follows the input record order regardless of concurrency.
    """
    detector = detector or RuleBasedLocationDetector()
    if max_in_flight <= 1:
        results = [caption_pipeline(rec, client, detector, max_retries)
                   for rec in records]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(
                lambda rec: caption_pipeline(rec, client, detector, max_retries),
                records))
    captions: list[Caption] = []
    issues: list[CaptionIssue] = []
    for result in results:
        captions.extend(result.captions)
        issues.extend(result.issues)
    return captions, issues
