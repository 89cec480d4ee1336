"""Tweet-style text normalization, in two variants.

* encoder variant — what the sentence encoder sees: HTML unescape, lowercase,
  mentions -> "@user", URLs -> "http", newlines -> spaces, whitespace collapse.
* analysis variant — what the keyword pipeline sees: mentions and URLs are
  removed outright, then non-alphanumeric characters and purely numeric
  tokens are stripped.

Rules apply in the listed order; both variants are deterministic.
"""

from __future__ import annotations

import html
import re

_MENTION = re.compile(r"@\w+")
_URL = re.compile(r"(?:https?://\S+|www\.\S+)")
_WS = re.compile(r"\s+")
_NON_ALNUM = re.compile(r"[^a-z0-9\s]")


def _base(text: str) -> str:
    t = html.unescape(text)
    return t.lower()


def preprocess_encoder(text: str) -> str:
    """Normalization variant used as encoder input (mentions/URLs replaced)."""
    t = _base(text)
    t = _MENTION.sub("@user", t)
    t = _URL.sub("http", t)
    t = t.replace("\n", " ").replace("\r", " ")
    return _WS.sub(" ", t).strip()


def preprocess_analysis(text: str) -> str:
    """Normalization variant stored for keyword extraction (mentions/URLs removed)."""
    t = _base(text)
    t = _MENTION.sub(" ", t)
    t = _URL.sub(" ", t)
    t = t.replace("\n", " ").replace("\r", " ")
    t = _NON_ALNUM.sub("", t)
    tokens = [tok for tok in t.split() if not tok.isdigit()]
    return " ".join(tokens)
