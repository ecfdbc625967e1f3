"""Flat, line-oriented configuration documents.

Syntax, shared by the constraint-set, timing-policy, and detector-rule
files:

* ``key: value`` lines. Keys are lowercase identifiers.
* ``[section]`` lines open a new entry of a list section; the following
  ``key: value`` lines belong to that entry. Repeating the section line
  appends another entry.
* Keys appearing before any section line are document-level.
* Blank lines and lines starting with ``#`` are ignored.

The parser is deliberately dependency-free and keeps line numbers so
that validation errors can point at their source.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import MalformedDocumentError

_KEY_RE = re.compile(r"^[a-z][a-zA-Z0-9_]*$")
_SECTION_RE = re.compile(r"^\[([a-z][a-z0-9_]*)\]$")


@dataclass
class Entry:
    """One ``[section]`` entry: its name, source line, and fields."""

    name: str
    line: int
    fields: dict[str, tuple[str, int]] = field(default_factory=dict)

    def get(self, key: str) -> str | None:
        item = self.fields.get(key)
        return item[0] if item else None

    def line_of(self, key: str) -> int | None:
        item = self.fields.get(key)
        return item[1] if item else None


@dataclass
class Document:
    """Parsed document: top-level fields plus ordered section entries."""

    top: dict[str, tuple[str, int]] = field(default_factory=dict)
    entries: list[Entry] = field(default_factory=list)

    def top_get(self, key: str) -> str | None:
        item = self.top.get(key)
        return item[0] if item else None

    def entries_named(self, name: str) -> list[Entry]:
        return [e for e in self.entries if e.name == name]


def parse_document(text: str) -> Document:
    """Parse document text; raises MalformedDocumentError on bad syntax."""
    doc = Document()
    current: Entry | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = Entry(name=m.group(1), line=lineno)
            doc.entries.append(current)
            continue
        if ":" not in line:
            raise MalformedDocumentError(
                f"expected 'key: value' or '[section]', got {line!r}",
                line=lineno)
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if not _KEY_RE.match(key):
            raise MalformedDocumentError(f"invalid key {key!r}", line=lineno)
        scope = current.fields if current is not None else doc.top
        if key in scope:
            raise MalformedDocumentError(f"duplicate key {key!r}", line=lineno)
        scope[key] = (value, lineno)
    return doc


def format_document(top: dict[str, str],
                    sections: list[tuple[str, dict[str, str]]]) -> str:
    """Serialize fields back to document text (inverse of parse_document)."""
    lines: list[str] = []
    for key, value in top.items():
        lines.append(f"{key}: {value}")
    for name, fields in sections:
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key, value in fields.items():
            lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"
