"""Deterministic synthetic text corpus for tests, demos, and benchmarks.

Built from a fixed word list with a seeded PRNG so every machine generates
the identical byte sequence; real corpora can be swapped in through the job
config's corpus path.
"""

from __future__ import annotations

import random

_WORDS = (
    "queue task worker gradient model version batch epoch lease tensor "
    "vector layer gate cell hidden softmax loss train fetch ack publish "
    "store reduce map broker shard sample window update sweep deliver "
    "volunteer browser socket frame network compute idle join leave retry"
).split()

_PUNCT = [". ", ", ", "; ", " - ", ": "]


def synthetic_corpus(size: int = 50_000, seed: int = 7) -> str:
    """Pseudo-text of roughly ``size`` characters; pure in (size, seed)."""
    rng = random.Random(seed)
    parts: list[str] = []
    total = 0
    while total < size:
        sentence_len = rng.randrange(4, 12)
        words = [_WORDS[rng.randrange(len(_WORDS))] for _ in range(sentence_len)]
        words[0] = words[0].capitalize()
        sentence = " ".join(words) + _PUNCT[rng.randrange(len(_PUNCT))]
        if rng.random() < 0.1:
            sentence += "\n"
        parts.append(sentence)
        total += len(sentence)
    return "".join(parts)[:size]


_IDENT_CHARS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ$_"
_OPS = [
    "=", "(", ")", "{", "}", "[", "]", ";", ",", ".", "+", "-", "*", "/",
    "&&", "||", "==", "=>", ":", "?", "!", "<", ">",
]
_KEYWORDS = [
    "var", "function", "return", "if", "else", "for", "new", "typeof",
    "null", "this", "true", "false",
]


def synthetic_code_corpus(size: int = 50_000, seed: int = 13) -> str:
    """Minified-source-like text: short random identifiers, numbers, and
    operators. Much higher per-character entropy than the word corpus, which
    is what makes small-batch gradients noisy on it."""
    rng = random.Random(seed)
    parts: list[str] = []
    total = 0
    while total < size:
        r = rng.random()
        if r < 0.42:
            tok = "".join(rng.choice(_IDENT_CHARS) for _ in range(rng.randrange(1, 4)))
        elif r < 0.52:
            tok = str(rng.randrange(0, 1000))
        elif r < 0.60:
            tok = rng.choice(_KEYWORDS)
        elif r < 0.97:
            tok = rng.choice(_OPS)
        else:
            tok = "\n"
        parts.append(tok)
        total += len(tok)
    return "".join(parts)[:size]
