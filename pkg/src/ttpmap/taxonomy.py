"""ATT&CK technique identifiers and the label universe they live in.

Technique IDs look like ``T1059`` (technique) or ``T1059.001`` (sub-technique).
A taxonomy maps each ID to its display name and description, which the
re-ranker prompt shows to the model.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .errors import DuplicateId, FormatError, MalformedId

logger = logging.getLogger(__name__)

_ID_RE = re.compile(r"^[Tt](\d{4})(?:\.(\d{3}))?$")


@dataclass(frozen=True)
class TechniqueId:
    """Parsed ATT&CK identifier: 4-digit technique, optional 3-digit sub suffix."""

    technique: str
    sub: Optional[str] = None

    @property
    def is_subtechnique(self) -> bool:
        return self.sub is not None

    def __str__(self) -> str:
        return self.technique if self.sub is None else f"{self.technique}.{self.sub}"

    def __lt__(self, other: "TechniqueId") -> bool:
        return (self.technique, self.sub or "") < (other.technique, other.sub or "")


def parse_id(text: str) -> TechniqueId:
    """Parse ``T####`` / ``T####.###``, tolerating whitespace and a lowercase prefix.

    Raises MalformedId for anything else (wrong digit counts, missing prefix,
    extra segments).
    """
    if not isinstance(text, str):
        raise MalformedId(f"technique ID must be a string, got {type(text).__name__}")
    m = _ID_RE.match(text.strip())
    if m is None:
        raise MalformedId(f"not a technique ID: {text!r}")
    return TechniqueId(technique="T" + m.group(1), sub=m.group(2))


def format_id(tid: TechniqueId) -> str:
    """Canonical text form; inverse of :func:`parse_id`."""
    return str(tid)


def truncate(tid: TechniqueId) -> TechniqueId:
    """Drop the sub-technique suffix; identity on technique-level IDs."""
    return tid if tid.sub is None else TechniqueId(technique=tid.technique)


@dataclass(frozen=True)
class TaxonomyEntry:
    """One technique or sub-technique with its prompt-facing metadata.

    ``parent`` is present iff the ID is a sub-technique and always equals
    ``truncate(id)``. ``revoked`` flags entries revoked or deprecated by
    ATT&CK; they stay valid labels because datasets reference historical IDs.
    """

    id: TechniqueId
    name: str
    description: str = ""
    parent: Optional[TechniqueId] = None
    revoked: bool = False


class Taxonomy:
    """Immutable ID-keyed collection of :class:`TaxonomyEntry`."""

    def __init__(self, entries: Iterable[TaxonomyEntry]):
        self._entries: dict[str, TaxonomyEntry] = {}
        for entry in entries:
            key = str(entry.id)
            if key in self._entries:
                raise DuplicateId(f"duplicate taxonomy entry: {key}")
            self._entries[key] = entry
        missing = sorted(
            str(e.id)
            for e in self._entries.values()
            if e.parent is not None and str(e.parent) not in self._entries
        )
        if missing:
            raise FormatError(
                "sub-techniques without their parent technique: " + ", ".join(missing)
            )

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[TaxonomyEntry]:
        return iter(self._entries.values())

    def __contains__(self, item: Union[TechniqueId, str]) -> bool:
        if isinstance(item, TechniqueId):
            return str(item) in self._entries
        try:
            return str(parse_id(item)) in self._entries
        except MalformedId:
            return False

    def get(self, item: Union[TechniqueId, str]) -> Optional[TaxonomyEntry]:
        key = str(item if isinstance(item, TechniqueId) else parse_id(item))
        return self._entries.get(key)

    def __getitem__(self, item: Union[TechniqueId, str]) -> TaxonomyEntry:
        entry = self.get(item)
        if entry is None:
            raise KeyError(str(item))
        return entry

    def name_of(self, tid: TechniqueId) -> str:
        entry = self.get(tid)
        return entry.name if entry is not None else ""


def _entry(tid: TechniqueId, name: str, description: str, revoked: bool = False) -> TaxonomyEntry:
    return TaxonomyEntry(
        id=tid,
        name=name,
        description=description or "",
        parent=truncate(tid) if tid.is_subtechnique else None,
        revoked=revoked,
    )


def _load_csv(path: Path) -> list[TaxonomyEntry]:
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in ("id", "name", "description"):
            if col not in fields:
                raise FormatError(f"{path}: missing required CSV column {col!r}")
        for row_no, row in enumerate(reader, start=2):
            raw = (row.get("id") or "").strip()
            if not raw:
                raise FormatError(f"{path}:{row_no}: empty id field")
            try:
                tid = parse_id(raw)
            except MalformedId as exc:
                raise MalformedId(f"{path}:{row_no}: {exc}") from exc
            revoked = (row.get("revoked") or "").strip().lower() in ("1", "true", "yes")
            entries.append(_entry(tid, (row.get("name") or "").strip(),
                                  row.get("description") or "", revoked))
    return entries


def _load_stix_bundle(path: Path) -> list[TaxonomyEntry]:
    try:
        with path.open(encoding="utf-8") as fh:
            bundle = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    objects = bundle.get("objects")
    if not isinstance(objects, list):
        raise FormatError(f"{path}: STIX bundle has no 'objects' array")
    entries = []
    for i, obj in enumerate(objects):
        if not isinstance(obj, dict) or obj.get("type") != "attack-pattern":
            continue
        external_id = None
        for ref in obj.get("external_references", []):
            if ref.get("source_name") == "mitre-attack" and ref.get("external_id"):
                external_id = ref["external_id"]
                break
        if external_id is None:
            logger.debug("attack-pattern without mitre-attack reference at object %d", i)
            continue
        try:
            tid = parse_id(external_id)
        except MalformedId:
            # Tactic-shaped or otherwise non-technique external IDs are not ours.
            logger.debug("skipping non-technique external id %r at object %d", external_id, i)
            continue
        revoked = bool(obj.get("revoked")) or bool(obj.get("x_mitre_deprecated"))
        entries.append(_entry(tid, obj.get("name", ""), obj.get("description", ""), revoked))
    return entries


def load_taxonomy(source: Union[str, Path], format: str = "csv") -> Taxonomy:
    """Load a taxonomy from ``csv`` (header id,name,description) or ``stix-bundle``.

    Parent links are derived from ID structure. Entries missing descriptions
    get empty descriptions. Raises FormatError with a row/record locator,
    or DuplicateId when an ID appears twice.
    """
    path = Path(source)
    if format == "csv":
        entries = _load_csv(path)
    elif format == "stix-bundle":
        entries = _load_stix_bundle(path)
    else:
        raise ValueError(f"unknown taxonomy format: {format!r}")
    return Taxonomy(entries)
