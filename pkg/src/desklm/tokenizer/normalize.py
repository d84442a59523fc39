"""Text normalization and pretokenization.

The contract is lossless: ``"".join(pretokens) == text`` always, so decoding
is plain concatenation.  Rules:

* a run of spaces followed by a word run forms ONE pretoken (the word carries
  its leading spaces, so pieces like ``" the"`` or ``"    "`` can be learned);
* a run of spaces not followed by a word (end of text, before a digit or
  newline) is its own pretoken — this is what multi-space pieces segment;
* with digit splitting on, every decimal digit (Unicode Nd) is a single-char
  pretoken and never absorbs spaces;
* tab/newline-class whitespace is always a single-char pretoken;
* everything else is a word character.

Nothing is rewritten — no lowercasing, no whitespace collapsing.
"""

from __future__ import annotations

import unicodedata

_HARD_BREAKS = frozenset("\t\n\r\v\f")


def _is_digit(ch: str) -> bool:
    return unicodedata.category(ch) == "Nd"


def _is_word_char(ch: str, split_digits: bool) -> bool:
    if ch == " " or ch in _HARD_BREAKS:
        return False
    if split_digits and _is_digit(ch):
        return False
    return True


def check_text(text: str) -> None:
    """Reject strings that cannot be encoded as UTF-8 (lone surrogates)."""
    for i, ch in enumerate(text):
        if 0xD800 <= ord(ch) <= 0xDFFF:
            offset = len(text[:i].encode("utf-8"))
            raise ValueError(
                f"invalid UTF-8 input: lone surrogate U+{ord(ch):04X} at byte offset {offset}")


def normalize_and_pretokenize(text: str, split_digits: bool = True) -> list[str]:
    """Split text into pretokens whose concatenation reproduces it exactly."""
    check_text(text)
    pretokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == " ":
            j = i
            while j < n and text[j] == " ":
                j += 1
            if j < n and _is_word_char(text[j], split_digits):
                k = j
                while k < n and _is_word_char(text[k], split_digits):
                    k += 1
                pretokens.append(text[i:k])
                i = k
            else:
                pretokens.append(text[i:j])
                i = j
        elif ch in _HARD_BREAKS:
            pretokens.append(ch)
            i += 1
        elif split_digits and _is_digit(ch):
            pretokens.append(ch)
            i += 1
        else:
            k = i
            while k < n and _is_word_char(text[k], split_digits):
                k += 1
            pretokens.append(text[i:k])
            i = k
    return pretokens
