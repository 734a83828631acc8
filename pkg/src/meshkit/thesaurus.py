"""MeSH-style thesaurus: tree numbers, descriptors, and the decoder vocabulary.

A tree number is a dotted path like ``C01.748.214``: a letter-plus-two-digit
root segment followed by three-digit segments. The decoder vocabulary covers
every possible segment piece (26 letters, 100 two-digit strings, 1000
three-digit strings) plus four reserved symbols.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

# Reserved decoder symbols, in fixed id order.
BOS = "<BOS>"
EOS = "<EOS>"
PAD = "<PAD>"
DOT = "."
RESERVED = (BOS, EOS, PAD, DOT)

BOS_ID, EOS_ID, PAD_ID, DOT_ID = 0, 1, 2, 3

LETTERS = tuple(chr(c) for c in range(ord("A"), ord("Z") + 1))
D2_STRINGS = tuple(f"{i:02d}" for i in range(100))
D3_STRINGS = tuple(f"{i:03d}" for i in range(1000))

VOCAB_SIZE = len(RESERVED) + len(LETTERS) + len(D2_STRINGS) + len(D3_STRINGS)

MAX_DEPTH = 15

_FIRST_SEGMENT = re.compile(r"^[A-Z][0-9]{2}$")
_LATER_SEGMENT = re.compile(r"^[0-9]{3}$")


class ThesaurusError(Exception):
    """Base class for thesaurus parsing and loading failures."""


class MalformedTreeNumber(ThesaurusError):
    pass


class UnknownToken(ThesaurusError):
    pass


class TokenKind(enum.Enum):
    LETTER = "letter"
    D2 = "d2"
    D3 = "d3"


@dataclass(frozen=True)
class TreeToken:
    kind: TokenKind
    text: str

    def __post_init__(self) -> None:
        ok = (
            (self.kind is TokenKind.LETTER and len(self.text) == 1 and "A" <= self.text <= "Z")
            or (self.kind is TokenKind.D2 and len(self.text) == 2 and self.text.isdigit())
            or (self.kind is TokenKind.D3 and len(self.text) == 3 and self.text.isdigit())
        )
        if not ok:
            raise ValueError(f"token text {self.text!r} does not match kind {self.kind}")


@dataclass(frozen=True, order=True)
class TreeNumber:
    segments: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise MalformedTreeNumber("tree number needs at least one segment")
        if len(self.segments) > MAX_DEPTH:
            raise MalformedTreeNumber(
                f"tree number {'.'.join(self.segments)} exceeds depth {MAX_DEPTH}"
            )
        if not _FIRST_SEGMENT.match(self.segments[0]):
            raise MalformedTreeNumber(
                f"first segment {self.segments[0]!r} must be a letter plus two digits"
            )
        for seg in self.segments[1:]:
            if not _LATER_SEGMENT.match(seg):
                raise MalformedTreeNumber(f"segment {seg!r} must be three digits")

    @property
    def depth(self) -> int:
        return len(self.segments)

    @property
    def letter(self) -> str:
        return self.segments[0][0]

    def render(self) -> str:
        return ".".join(self.segments)

    def __str__(self) -> str:
        return self.render()

    def parent(self) -> "TreeNumber | None":
        """Immediate parent position, or None for depth-1 numbers."""
        if len(self.segments) == 1:
            return None
        return TreeNumber(self.segments[:-1])

    def prefixes(self) -> Iterator["TreeNumber"]:
        """Proper prefixes, shortest first (excludes the number itself)."""
        for d in range(1, len(self.segments)):
            yield TreeNumber(self.segments[:d])


def parse_tree_number(text: str) -> TreeNumber:
    """Parse a dotted tree-number string, rejecting any malformed shape."""
    if not text:
        raise MalformedTreeNumber("empty tree number")
    segments = text.split(".")
    if any(not seg for seg in segments):
        raise MalformedTreeNumber(f"empty segment in {text!r}")
    return TreeNumber(tuple(segments))


def tokenize_tree_number(tn: TreeNumber) -> list[TreeToken]:
    """Split a tree number into vocabulary tokens: LETTER D2 then one D3 per level."""
    tokens = [
        TreeToken(TokenKind.LETTER, tn.segments[0][0]),
        TreeToken(TokenKind.D2, tn.segments[0][1:]),
    ]
    tokens.extend(TreeToken(TokenKind.D3, seg) for seg in tn.segments[1:])
    return tokens


def detokenize_tree_number(tokens: Iterable[TreeToken]) -> TreeNumber:
    """Inverse of tokenize_tree_number; raises MalformedTreeNumber on bad shapes."""
    toks = list(tokens)
    if len(toks) < 2 or toks[0].kind is not TokenKind.LETTER or toks[1].kind is not TokenKind.D2:
        raise MalformedTreeNumber("token sequence must start LETTER, D2")
    if any(t.kind is not TokenKind.D3 for t in toks[2:]):
        raise MalformedTreeNumber("tokens after the first segment must all be D3")
    segments = [toks[0].text + toks[1].text] + [t.text for t in toks[2:]]
    return TreeNumber(tuple(segments))


_LETTER_BASE = len(RESERVED)
_D2_BASE = _LETTER_BASE + len(LETTERS)
_D3_BASE = _D2_BASE + len(D2_STRINGS)


def vocab_index(token: TreeToken | str) -> int:
    """Stable id for a tree token or reserved symbol.

    Layout: BOS=0, EOS=1, PAD=2, DOT=3, letters 4..29, two-digit strings
    30..129, three-digit strings 130..1129.
    """
    if isinstance(token, str):
        try:
            return RESERVED.index(token)
        except ValueError:
            raise UnknownToken(f"unknown reserved symbol {token!r}") from None
    if token.kind is TokenKind.LETTER:
        return _LETTER_BASE + (ord(token.text) - ord("A"))
    if token.kind is TokenKind.D2:
        return _D2_BASE + int(token.text)
    if token.kind is TokenKind.D3:
        return _D3_BASE + int(token.text)
    raise UnknownToken(f"unknown token {token!r}")


def vocab_token(index: int) -> TreeToken | str:
    """Inverse of vocab_index."""
    if 0 <= index < _LETTER_BASE:
        return RESERVED[index]
    if index < _D2_BASE:
        return TreeToken(TokenKind.LETTER, LETTERS[index - _LETTER_BASE])
    if index < _D3_BASE:
        return TreeToken(TokenKind.D2, D2_STRINGS[index - _D2_BASE])
    if index < VOCAB_SIZE:
        return TreeToken(TokenKind.D3, D3_STRINGS[index - _D3_BASE])
    raise UnknownToken(f"vocabulary id {index} out of range")


def iter_vocab() -> Iterator[TreeToken | str]:
    """Every vocabulary entry in id order."""
    for i in range(VOCAB_SIZE):
        yield vocab_token(i)


@dataclass(frozen=True)
class Descriptor:
    id: str
    label: str
    description: str
    tree_numbers: tuple[TreeNumber, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("descriptor id must be non-empty")
        if not self.label:
            raise ValueError(f"descriptor {self.id}: label must be non-empty")
        if not self.tree_numbers:
            raise ValueError(f"descriptor {self.id}: needs at least one tree number")

    @property
    def letters(self) -> frozenset[str]:
        return frozenset(tn.letter for tn in self.tree_numbers)


@dataclass
class Thesaurus:
    descriptors: dict[str, Descriptor] = field(default_factory=dict)
    tree_index: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.descriptors)

    def __contains__(self, descriptor_id: str) -> bool:
        return descriptor_id in self.descriptors

    def get(self, descriptor_id: str) -> Descriptor:
        try:
            return self.descriptors[descriptor_id]
        except KeyError:
            raise UnknownDescriptor(f"unknown descriptor {descriptor_id!r}") from None

    def descriptor_at(self, tree_number: str) -> str | None:
        """Descriptor id owning the given tree-number string, if any."""
        return self.tree_index.get(tree_number)

    def ids(self) -> list[str]:
        return sorted(self.descriptors)


class UnknownDescriptor(ThesaurusError):
    pass


@dataclass(frozen=True)
class LoadIssue:
    line_no: int
    kind: str  # malformed-record | duplicate-id | duplicate-tree-number
    message: str


class ThesaurusLoadError(ThesaurusError):
    """Raised in strict mode; carries every offending line."""

    def __init__(self, issues: list[LoadIssue]):
        self.issues = issues
        lines = ", ".join(f"line {i.line_no}: {i.message}" for i in issues)
        super().__init__(f"{len(issues)} bad record(s): {lines}")


class MalformedRecord(ThesaurusLoadError):
    pass


class DuplicateId(ThesaurusLoadError):
    pass


class DuplicateTreeNumber(ThesaurusLoadError):
    pass


_ISSUE_CLASS = {
    "malformed-record": MalformedRecord,
    "duplicate-id": DuplicateId,
    "duplicate-tree-number": DuplicateTreeNumber,
}


@dataclass
class LoadReport:
    loaded: int
    skipped: list[LoadIssue] = field(default_factory=list)


def _parse_record(line: str, line_no: int) -> Descriptor | LoadIssue:
    """Parse one ingest line: id<TAB>label<TAB>description<TAB>tn1;tn2;..."""
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 4:
        return LoadIssue(line_no, "malformed-record", f"expected 4 tab-separated fields, got {len(fields)}")
    rec_id, label, description, tn_field = fields
    if not rec_id or not label:
        return LoadIssue(line_no, "malformed-record", "empty id or label")
    tns: list[TreeNumber] = []
    for raw in tn_field.split(";"):
        raw = raw.strip()
        if not raw:
            continue
        try:
            tns.append(parse_tree_number(raw))
        except MalformedTreeNumber as exc:
            return LoadIssue(line_no, "malformed-record", str(exc))
    if not tns:
        return LoadIssue(line_no, "malformed-record", "no tree numbers")
    return Descriptor(rec_id, label, description, tuple(sorted(set(tns))))


def load_thesaurus(records: Iterable[str], strict: bool = True) -> tuple[Thesaurus, LoadReport]:
    """Load descriptors from line-delimited records.

    Strict mode collects every bad line and raises one error listing all of
    them; lenient mode skips bad lines and reports them.
    """
    th = Thesaurus()
    issues: list[LoadIssue] = []
    for line_no, line in enumerate(records, start=1):
        if not line.strip():
            continue
        parsed = _parse_record(line, line_no)
        if isinstance(parsed, LoadIssue):
            issues.append(parsed)
            continue
        if parsed.id in th.descriptors:
            issues.append(LoadIssue(line_no, "duplicate-id", f"descriptor id {parsed.id!r} reused"))
            continue
        clash = next((str(tn) for tn in parsed.tree_numbers if str(tn) in th.tree_index), None)
        if clash is not None:
            issues.append(
                LoadIssue(line_no, "duplicate-tree-number", f"tree number {clash} already owned by {th.tree_index[clash]!r}")
            )
            continue
        th.descriptors[parsed.id] = parsed
        for tn in parsed.tree_numbers:
            th.tree_index[str(tn)] = parsed.id
    if strict and issues:
        kinds = {i.kind for i in issues}
        cls = _ISSUE_CLASS[issues[0].kind] if len(kinds) == 1 else ThesaurusLoadError
        raise cls(issues)
    return th, LoadReport(loaded=len(th.descriptors), skipped=issues)


def load_thesaurus_file(path: str, strict: bool = True) -> tuple[Thesaurus, LoadReport]:
    with open(path, "r", encoding="utf-8") as fh:
        return load_thesaurus(fh, strict=strict)
