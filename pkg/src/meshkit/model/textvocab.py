"""Input-side text vocabulary for the toy encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..pairs import CLS, COLON, SEP, Corpus, tokenize_text
from ..thesaurus import Thesaurus

UNK = "<unk>"

SPECIALS = (UNK, CLS, SEP, COLON)


@dataclass(frozen=True)
class TextVocab:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.index:
            object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, 0)  # id 0 is <unk>


def build_text_vocab(corpus: Corpus | None, th: Thesaurus | None) -> TextVocab:
    """Vocabulary over every token the assembled inputs can contain."""
    words: set[str] = set()
    if th is not None:
        for desc in th.descriptors.values():
            words.update(tokenize_text(desc.label))
            words.update(tokenize_text(desc.description))
    if corpus is not None:
        for doc in corpus:
            words.update(tokenize_text(doc.abstract))
    return TextVocab(SPECIALS + tuple(sorted(words)))
