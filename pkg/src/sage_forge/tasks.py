"""Task prompts: room types, required objects and their relations."""

from __future__ import annotations

import json
import logging
import re
from functools import lru_cache
from importlib import resources

from .assets import known_categories
from .scene import RequiredObject, TaskSpec, normalize_category

log = logging.getLogger(__name__)

MANIPULATION_VERBS = ("pick", "place", "put", "grasp", "move", "carry", "bring")
_STOP = {"a", "an", "the", "and", "with", "on", "in", "into", "to", "it", "of", "another", "other", "some", "two", "three"}


class UnknownRoomType(KeyError):
    pass


@lru_cache(maxsize=None)
def room_table() -> dict:
    return json.loads(resources.files("sage_forge.data").joinpath("rooms.json").read_text("utf-8"))


def room_types() -> list[str]:
    return [k for k in room_table() if k not in ("generic", "aliases", "room_aliases") and not k.startswith("_")]


def room_config(room_type: str) -> dict:
    t = room_table()
    key = normalize_category(room_type)
    key = t["room_aliases"].get(key, key)
    if key not in room_types():
        log.warning("unknown room type %r; using the generic band", room_type)
        return t["generic"]
    return t[key]


def _vocabulary() -> list[tuple[str, str]]:
    """(surface phrase, category) pairs, longest phrase first."""
    vocab = {c: c for c in known_categories()}
    for c in known_categories():
        vocab.setdefault(c + "s", c)
    for alias, cat in room_table()["aliases"].items():
        vocab.setdefault(alias, cat)
    return sorted(vocab.items(), key=lambda kv: (-len(kv[0]), kv[0]))


def match_category(text: str) -> str | None:
    """Longest known category or alias named in the text."""
    low = " " + re.sub(r"[^a-z ]+", " ", text.lower()) + " "
    best = None
    for phrase, cat in _vocabulary():
        m = re.search(rf"\b{re.escape(phrase)}\b", low)
        if m and (best is None or m.start() < best[0] or (m.start() == best[0] and len(phrase) > best[2])):
            best = (m.start(), cat, len(phrase))
    return best[1] if best else None


def _mentions(prompt: str) -> list[tuple[int, int, str, str]]:
    """Non-overlapping (start, end, phrase, category) mentions in reading order."""
    low = prompt.lower()
    room_spans = []
    for rt in list(room_types()) + list(room_table()["room_aliases"]):
        for m in re.finditer(rf"\b{re.escape(rt)}s?\b", low):
            room_spans.append((m.start(), m.end()))
    taken = list(room_spans)
    out = []
    for phrase, cat in _vocabulary():
        for m in re.finditer(rf"\b{re.escape(phrase)}\b", low):
            if any(m.start() < e and m.end() > s for s, e in taken):
                continue
            taken.append((m.start(), m.end()))
            out.append((m.start(), m.end(), m.group(0), cat))
    return sorted(out)


def parse_room_types(prompt: str) -> tuple[str, ...]:
    low = prompt.lower()
    found = []
    if re.search(r"\b(apartment|two[- ]room|2[- ]room)\b", low):
        found += ["bedroom", "living room"]
    names = list(room_types()) + list(room_table()["room_aliases"])
    hits = []
    for name in names:
        m = re.search(rf"\b{re.escape(name)}s?\b", low)
        if m:
            canon = room_table()["room_aliases"].get(name, name)
            hits.append((m.start(), canon))
    for _, canon in sorted(hits):
        if canon not in found:
            found.append(canon)
    return tuple(found)


def _default_room(categories: list[str]) -> str:
    if any(c in ("desk", "monitor", "laptop", "office chair", "coke can") for c in categories):
        return "office"
    if any(c in ("apple", "orange", "bowl", "plate", "cup", "kettle", "mug") for c in categories):
        return "kitchen"
    return "living room"


def parse_task(prompt: str, room_types: tuple[str, ...] | None = None) -> TaskSpec:
    """Rule-based reading of a task prompt.

    Every named object category becomes a required object. Containment phrases
    (``X on the Y``, ``a Y with a X``) attach an ``on(Y)`` constraint to X.
    """
    mentions = _mentions(prompt)
    low = prompt.lower()
    required: list[list[str]] = []
    seen_idx: dict[int, int] = {}
    for i, (s, e, phrase, cat) in enumerate(mentions):
        pre = re.findall(r"[a-z]+", low[max(0, s - 30) : s])
        adjectives = []
        for w in reversed(pre):
            if w in _STOP or w in MANIPULATION_VERBS:
                break
            adjectives.insert(0, w)
            if len(adjectives) == 2:
                break
        desc = " ".join(["a", *adjectives, cat]) if cat != "apple" or adjectives else "an apple"
        # "another desk" or repeated mention of the same object re-uses the first entry unless marked new.
        repeat = next((k for k, r in enumerate(required) if r[1] == cat), None)
        is_new = re.search(r"\b(another|other|second|two)\s+(\w+\s+)?$", low[max(0, s - 20) : s]) is not None
        if repeat is not None and not is_new:
            seen_idx[i] = repeat
            continue
        seen_idx[i] = len(required)
        required.append([desc, cat, ""])
    # Relations between adjacent mentions.
    for i in range(len(mentions) - 1):
        s1, e1, _, c1 = mentions[i]
        s2, e2, _, c2 = mentions[i + 1]
        between = low[e1:s2]
        a, b = seen_idx[i], seen_idx[i + 1]
        if a == b:
            continue
        if re.fullmatch(r"\s+(on|on top of|in|inside|into)\s+(the|a|an)\s+", between):
            if not required[a][2]:
                required[a][2] = f"on({c2})"
        elif re.fullmatch(r"\s+with\s+(a|an|the|some)\s+", between):
            if not required[b][2]:
                required[b][2] = f"on({c1})"
    rts = tuple(room_types) if room_types else parse_room_types(prompt)
    if not rts:
        rts = (_default_room([r[1] for r in required]),)
    spec = TaskSpec(prompt, rts, tuple(RequiredObject(d, c, k) for d, c, k in required))
    if is_manipulation(prompt) and not spec.required_objects:
        raise ValueError(f"manipulation prompt names no known object: {prompt!r}")
    return spec


def is_manipulation(prompt: str) -> bool:
    low = prompt.lower()
    return any(re.search(rf"\b{v}\b", low) for v in MANIPULATION_VERBS)
