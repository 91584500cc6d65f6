"""Rule-based preference detection.

A user utterance is flagged as a preference when a first-person trigger
phrase ("i like", "i prefer", ...) starts a clause and an opinion-lexicon
token occurs within a small window after it.  Strong-sentiment triggers
("i hate", "i love", "i can't stand") fire on their own, anywhere in the
utterance, as long as a word follows them; a negation marker spliced into a
positive trigger ("i don't like ...") is promoted to the strong rule.

Everything is deterministic and traced: the Detection carries one line per
rule consulted, in scan order, so a verdict can always be explained.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import DataFormatError

DEFAULT_WINDOW = 5

# Clause openers accepted before an ordinary trigger.
_CLAUSE_OPENERS = {None, ".", ",", "and", "but"}

# Triggers that fire without the opinion-lexicon requirement and without
# the clause-start test (so "... I hate X" is always a preference).
DEFAULT_STRONG_TRIGGERS = frozenset({
    "i hate", "i love", "i can't stand", "i cannot stand",
    "i adore", "i despise", "i loathe",
})

_SCAN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*|[.,!?;]")


def _scan(text: str) -> list[str]:
    """Lowercased word tokens plus sentence punctuation kept as tokens."""
    return _SCAN_RE.findall(text.replace("’", "'").lower())


@dataclass(frozen=True)
class RuleSet:
    trigger_phrases: tuple[str, ...]
    opinion_lexicon: frozenset[str]
    negation_markers: frozenset[str]
    window: int = DEFAULT_WINDOW
    strong_triggers: frozenset[str] = DEFAULT_STRONG_TRIGGERS

    def __post_init__(self):
        if not self.trigger_phrases:
            raise ValueError("rule set needs at least one trigger phrase")
        for entry in (list(self.trigger_phrases) + list(self.opinion_lexicon)
                      + list(self.negation_markers)):
            if entry != entry.lower():
                raise ValueError(f"rule entries must be lowercase: {entry!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class Detection:
    label: str  # "preference" | "non-preference"
    matched_trigger: str | None = None
    matched_opinion: str | None = None
    trace: tuple[str, ...] = ()

    @property
    def is_preference(self) -> bool:
        return self.label == "preference"


def _match_trigger(tokens, i, phrase_tokens, negations):
    """Try phrase at position i; a single negation marker may be spliced in
    after the first token.  Returns (surface_tokens, negated) or None."""
    n = len(phrase_tokens)
    if tokens[i:i + n] == phrase_tokens:
        return tokens[i:i + n], False
    if n >= 2 and i + n + 1 <= len(tokens):
        if (tokens[i] == phrase_tokens[0]
                and tokens[i + 1] in negations
                and tokens[i + 2:i + n + 1] == phrase_tokens[1:]):
            return tokens[i:i + n + 1], True
    return None


def detect(rules: RuleSet, user_text: str) -> Detection:
    """Classify one user utterance. Pure function of (rules, text)."""
    tokens = tuple(_scan(user_text))
    trace: list[str] = []
    phrase_cache = [(p, tuple(p.split())) for p in rules.trigger_phrases]

    for i in range(len(tokens)):
        for phrase, phrase_tokens in phrase_cache:
            hit = _match_trigger(tokens, i, phrase_tokens, rules.negation_markers)
            if hit is None:
                continue
            surface_tokens, negated = hit
            surface = " ".join(surface_tokens)
            end = i + len(surface_tokens)
            following = [t for t in tokens[end:] if t not in ".,!?;"]
            strong = phrase in rules.strong_triggers
            if negated:
                trace.append(f"negation inside {phrase!r}: {surface!r} "
                             f"promoted to strong rule")
                strong = True
            else:
                trace.append(f"trigger {phrase!r} matched at token {i}")

            if strong:
                if following:
                    trace.append(f"strong trigger {surface!r} fires")
                    return Detection("preference", matched_trigger=surface,
                                     trace=tuple(trace))
                trace.append(f"strong trigger {surface!r} has no object, skipped")
                continue

            prev = tokens[i - 1] if i > 0 else None
            if prev not in _CLAUSE_OPENERS:
                trace.append(f"trigger {phrase!r} rejected: not at clause start "
                             f"(preceded by {prev!r})")
                continue

            window_tokens = following[:rules.window]
            opinion = next((t for t in window_tokens
                            if t in rules.opinion_lexicon), None)
            if opinion is not None:
                trace.append(f"opinion {opinion!r} within {rules.window} tokens "
                             f"of {phrase!r}")
                return Detection("preference", matched_trigger=surface,
                                 matched_opinion=opinion, trace=tuple(trace))
            trace.append(f"no opinion token within {rules.window} tokens "
                         f"of {phrase!r}")
    return Detection("non-preference", trace=tuple(trace))


def explain(d: Detection) -> str:
    """Deterministic one-line-per-firing rendering of the rule trace."""
    if not d.trace:
        return "no trigger matched"
    return "\n".join(d.trace)


def parse_rules(text: str, window: int = DEFAULT_WINDOW, path=None) -> RuleSet:
    """Parse the [triggers]/[opinions]/[negations] rule file format."""
    sections = {"triggers": [], "opinions": [], "negations": []}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in sections:
                raise DataFormatError(f"unknown section {name!r}",
                                      line=lineno, path=path)
            current = name
            continue
        if current is None:
            raise DataFormatError("entry before any section header",
                                  line=lineno, path=path)
        sections[current].append(line.lower())
    if not sections["triggers"]:
        raise DataFormatError("no [triggers] entries", path=path)
    return RuleSet(
        trigger_phrases=tuple(sections["triggers"]),
        opinion_lexicon=frozenset(sections["opinions"]),
        negation_markers=frozenset(sections["negations"]),
        window=window,
    )


def load_rules(path, window: int = DEFAULT_WINDOW) -> RuleSet:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read(), window=window, path=path)


def default_rules(window: int = DEFAULT_WINDOW) -> RuleSet:
    text = resources.files("prefmem.data").joinpath("rules.txt").read_text("utf-8")
    return parse_rules(text, window=window)
