"""Word-level tokenizer with a corpus-built vocabulary."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from retrieval_nle.errors import ValidationError

PAD, BOS, EOS, SEP, UNK = "<pad>", "<bos>", "<eos>", "<sep>", "<unk>"
SPECIALS = (PAD, BOS, EOS, SEP, UNK)

# words, or single punctuation characters
_SPLIT_RE = re.compile(r"[^\W_]+|[^\w\s]|_")


def split_words(text: str) -> list[str]:
    return _SPLIT_RE.findall(text.lower())


class Tokenizer:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValidationError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary has duplicate tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        self.pad_id, self.bos_id, self.eos_id, self.sep_id, self.unk_id = range(len(SPECIALS))

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Tokenizer":
        words = set(split_words("the answer is because"))
        for t in texts:
            words.update(split_words(t))
        words.difference_update(SPECIALS)
        return cls(list(SPECIALS) + sorted(words))

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def vocab_size(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(w, self.unk_id) for w in split_words(text)]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i in (self.pad_id, self.bos_id, self.eos_id, self.sep_id):
                continue
            words.append(self.itos[i] if 0 <= i < len(self.itos) else UNK)
        return " ".join(words)

    def prompt_ids(self, question: str) -> list[int]:
        return [self.bos_id, *self.encode(question), self.sep_id]

    def canonical(self, text: str) -> str:
        """What ``text`` looks like after an encode/decode round trip."""
        return self.decode(self.encode(text))
