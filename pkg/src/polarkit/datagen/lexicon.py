"""The versioned color/texture/readable-text word list and matching helpers.

The list ships as editable package data; its version is recorded in every
verification result so filtered datasets stay auditable.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources

_WORD_RE = re.compile(r"[a-z]+(?:'[a-z]+)?")


@lru_cache(maxsize=1)
def load_lexicon() -> dict:
    payload = resources.files("polarkit.data").joinpath("lexicon.json").read_text("utf-8")
    return json.loads(payload)


def lexicon_version() -> int:
    return int(load_lexicon().get("version", 0))


def _words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def lexicon_hits(text: str, categories=("colors", "textures")) -> list[str]:
    """Lexicon words present in the text, in order of appearance."""
    lex = load_lexicon()
    banned = set()
    for cat in categories:
        banned.update(lex.get(cat, []))
    return [w for w in _words(text) if w in banned]


def strip_lexicon_words(label: str, categories=("colors", "textures")) -> str:
    """Drop color/texture words from a detection label ("red car" -> "car")."""
    lex = load_lexicon()
    banned = set()
    for cat in categories:
        banned.update(lex.get(cat, []))
    kept = [tok for tok in label.split() if tok.lower().strip(",.") not in banned]
    cleaned = " ".join(kept).strip()
    return cleaned if cleaned else "object"
