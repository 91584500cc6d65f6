"""Template-driven synthesis of labeled agent/user turns.

Each record is a two-line exchange rendered from a slot-filled template:
preference kinds (explicit statements, implicit complaints) get label 1,
neutral kinds (definitions, chitchat) get label 0.  Generation is a pure
function of (templates, topics, counts, seed) and rejects exact duplicate
(agent, user) pairs, so the same request always yields a byte-identical
JSONL file.

Also builds the event-sequence corpus used to train the memory controller:
sequences where every gap-th turn states a preference from one of K
category families, encoded as exactly orthogonal unit codes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import CapacityError, DataFormatError
from .memory import TurnEvent
from .numerics import Rng, mix_seed

KINDS = ("explicit-preference", "implicit-complaint",
         "neutral-definition", "neutral-chitchat")
PREFERENCE_KINDS = ("explicit-preference", "implicit-complaint")

OPINIONS = (
    "spicy", "sweet", "savory", "crunchy", "quiet", "cozy", "cheap", "fancy",
    "vintage", "modern", "classic", "minimalist", "colorful", "bold",
    "gentle", "brisk", "mellow", "acoustic", "scenic", "crowded",
    "greasy", "bland", "noisy", "clunky",
)

OBJECTS = (
    "options", "spots", "flavors", "routines", "setups", "corners",
    "playlists", "recipes", "formats", "editions", "sessions", "layouts",
    "bundles", "picks", "styles", "tools", "snacks", "venues",
)

# Dictionary-style glosses for the {object} slot of neutral-definition turns.
GLOSSES = (
    "a structured activity defined by shared rules, common tools, and accepted techniques",
    "a broad field covering related practices, specialized vocabulary, and typical venues",
    "an organized pastime built around regular sessions and gradual skill development",
    "a general term for products, places, and routines grouped under one everyday label",
    "a category of leisure defined more by its setting than by any single method",
    "a recurring social activity with its own etiquette, schedule, and equipment",
    "an umbrella term for techniques passed between practitioners over many years",
    "a subject studied through observation, comparison, and routine documentation",
    "a practical craft combining preparation, timing, and familiar materials",
    "an everyday institution shaped by local habits and seasonal demand",
    "a pursuit organized around venues, communities, and periodic events",
    "a domain with established formats, recognized variations, and niche followings",
    "a service-oriented setting governed by schedules, capacity, and local custom",
    "a tradition maintained through repetition, instruction, and small refinements",
    "a pastime measured in sessions, attempts, and incremental progress",
    "a collective label for goods and experiences sharing one practical purpose",
    "an area of interest supported by clubs, guides, and printed references",
    "a discipline balancing technique, patience, and routine upkeep",
    "a market segment defined by suppliers, regulars, and seasonal cycles",
    "a form of recreation scheduled around free evenings and weekends",
    "a cultural fixture documented in guides, reviews, and local listings",
    "an activity whose outcomes depend mostly on preparation and practice",
    "a loose network of venues, vendors, and recurring gatherings",
    "a practice formalized by conventions, terminology, and shared standards",
    "a hobby sustained by equipment, reference material, and steady habits",
    "a setting where routines, staffing, and layout shape the experience",
    "a field broad enough to include amateurs, specialists, and occasional visitors",
    "a customary activity adapted differently across regions and seasons",
    "a topic covered by introductory guides and long-running publications",
    "a pursuit commonly organized into levels, formats, or recurring series",
)

# Mundane nouns for the {object} slot of neutral-chitchat turns.
FACTS = (
    "schedule", "roster", "menu", "checklist", "timetable", "catalog",
    "handout", "summary", "agenda", "inventory", "backlog", "bulletin",
    "calendar", "dashboard", "directory", "draft", "ledger", "manual",
    "memo", "outline", "playbook", "recap", "register", "roadmap",
    "rota", "signup", "syllabus", "tracker", "worksheet", "notice",
)

_SLOT_NAMES = ("topic", "opinion", "object")


@dataclass(frozen=True)
class Template:
    id: str
    kind: str
    agent_pattern: str
    user_pattern: str
    category: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown template kind {self.kind!r}")
        for pattern in (self.agent_pattern, self.user_pattern):
            if not pattern or "\n" in pattern:
                raise ValueError(f"template {self.id!r}: patterns must be "
                                 f"non-empty single lines")
        for slot in _used_slots(self.agent_pattern + self.user_pattern):
            if slot not in _SLOT_NAMES:
                raise ValueError(f"template {self.id!r}: unknown slot {slot!r}")

    @property
    def label(self) -> int:
        return 1 if self.kind in PREFERENCE_KINDS else 0

    @property
    def used_slots(self) -> tuple[str, ...]:
        seen = _used_slots(self.agent_pattern + self.user_pattern)
        return tuple(s for s in _SLOT_NAMES if s in seen)

    def render(self, slots: dict[str, str]) -> tuple[str, str]:
        return (_fill(self.agent_pattern, slots), _fill(self.user_pattern, slots))


def _used_slots(pattern: str) -> set[str]:
    out, i = set(), 0
    while True:
        i = pattern.find("{", i)
        if i < 0:
            return out
        j = pattern.find("}", i)
        if j < 0:
            return out
        out.add(pattern[i + 1:j])
        i = j + 1


def _fill(pattern: str, slots: dict[str, str]) -> str:
    text = pattern
    for name, value in slots.items():
        text = text.replace("{" + name + "}", value)
    return text


@dataclass
class TurnRecord:
    id: int
    topic: str
    template_id: str
    agent: str
    user: str
    label: int
    category: str | None = None

    def two_line(self) -> str:
        return f"Agent: {self.agent}\nUser: {self.user}"


def slot_values(template: Template, slot: str) -> tuple[str, ...]:
    """Slot fills depend on the template kind: neutral kinds draw their
    {object} from glosses/facts rather than preference nouns."""
    if slot == "opinion":
        return OPINIONS
    if slot == "object":
        if template.kind == "neutral-definition":
            return GLOSSES
        if template.kind == "neutral-chitchat":
            return FACTS
        return OBJECTS
    raise ValueError(f"no value pool for slot {slot!r}")


def combo_capacity(template: Template, topics) -> int:
    n = 1
    for slot in template.used_slots:
        n *= len(topics) if slot == "topic" else len(slot_values(template, slot))
    return n


def generate(templates, topics, counts, seed: int) -> list[TurnRecord]:
    """Produce exactly counts = {"pref": n1, "nonpref": n0} labeled records.

    Deterministic under seed; raises CapacityError when the template x topic
    x slot space cannot yield the requested number of unique records.
    """
    topics = list(topics)
    if len(set(topics)) != len(topics) or any(not t for t in topics):
        raise ValueError("topics must be unique and non-empty")
    want = {1: int(counts["pref"]), 0: int(counts["nonpref"])}
    rng = Rng(seed)
    seen: set[tuple[str, str]] = set()
    out: list[TurnRecord] = []
    for label in (1, 0):
        target = want[label]
        if target == 0:
            continue
        pool = [t for t in templates if t.label == label]
        if not pool:
            raise CapacityError(f"no templates available for label {label}")
        capacity = sum(combo_capacity(t, topics) for t in pool)
        if target > capacity:
            raise CapacityError(
                f"requested {target} label-{label} records but the template "
                f"space holds only {capacity} unique combinations")
        made, attempts, budget = 0, 0, max(10_000, 200 * target)
        while made < target:
            attempts += 1
            if attempts > budget:
                raise CapacityError(
                    f"duplicate rejection stalled at {made}/{target} "
                    f"label-{label} records (capacity {capacity})")
            t = rng.choice(pool)
            topic = rng.choice(topics)
            slots = {"topic": topic}
            for slot in t.used_slots:
                if slot != "topic":
                    slots[slot] = rng.choice(slot_values(t, slot))
            agent, user = t.render(slots)
            key = (agent, user)
            if key in seen:
                continue
            seen.add(key)
            out.append(TurnRecord(id=-1, topic=topic, template_id=t.id,
                                  agent=agent, user=user, label=label,
                                  category=t.category))
            made += 1
    rng.shuffle(out)
    for i, rec in enumerate(out):
        rec.id = i
    return out


# ---------------------------------------------------------------------------
# JSONL dataset I/O (fixed field order, UTF-8, LF).
# ---------------------------------------------------------------------------

_FIELDS = ("id", "topic", "template_id", "agent", "user", "label", "category")


def record_to_json(rec: TurnRecord) -> str:
    obj = {"id": rec.id, "topic": rec.topic, "template_id": rec.template_id,
           "agent": rec.agent, "user": rec.user, "label": rec.label,
           "category": rec.category}
    return json.dumps(obj, ensure_ascii=False)


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def read_jsonl(path) -> list[TurnRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON: {exc.msg}",
                                      line=lineno, path=path) from exc
            for name in _FIELDS:
                if name != "category" and name not in obj:
                    raise DataFormatError(f"missing field {name!r}",
                                          line=lineno, path=path)
            if obj["label"] not in (0, 1):
                raise DataFormatError(f"label must be 0 or 1, got "
                                      f"{obj['label']!r}", line=lineno, path=path)
            records.append(TurnRecord(
                id=int(obj["id"]), topic=str(obj["topic"]),
                template_id=str(obj["template_id"]), agent=str(obj["agent"]),
                user=str(obj["user"]), label=int(obj["label"]),
                category=obj.get("category")))
    return records


# ---------------------------------------------------------------------------
# Default assets and template/topic file parsing.
# ---------------------------------------------------------------------------

def parse_templates(text: str, path=None) -> list[Template]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "preftpl v1":
        raise DataFormatError("expected 'preftpl v1' header", line=1, path=path)
    templates, ids = [], set()
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 5:
            raise DataFormatError(f"expected 5 |-separated fields, got "
                                  f"{len(parts)}", line=lineno, path=path)
        tid, kind, category, agent, user = (p.strip() for p in parts)
        if tid in ids:
            raise DataFormatError(f"duplicate template id {tid!r}",
                                  line=lineno, path=path)
        ids.add(tid)
        try:
            templates.append(Template(id=tid, kind=kind, agent_pattern=agent,
                                      user_pattern=user,
                                      category=None if category == "-" else category))
        except ValueError as exc:
            raise DataFormatError(str(exc), line=lineno, path=path) from exc
    if not templates:
        raise DataFormatError("no templates defined", path=path)
    return templates


def load_templates(path) -> list[Template]:
    with open(path, encoding="utf-8") as fh:
        return parse_templates(fh.read(), path=path)


def parse_topics(text: str) -> list[str]:
    topics = [line.strip() for line in text.splitlines()
              if line.strip() and not line.startswith("#")]
    if len(set(topics)) != len(topics):
        raise DataFormatError("duplicate topics in topic list")
    return topics


def load_topics(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return parse_topics(fh.read())


def _data_text(name: str) -> str:
    return resources.files("prefmem.data").joinpath(name).read_text("utf-8")


def default_templates() -> list[Template]:
    return parse_templates(_data_text("templates.txt"))


def default_topics() -> list[str]:
    return parse_topics(_data_text("topics.txt"))


def casual_probe_records() -> list[TurnRecord]:
    """Small handcrafted informal corpus for detector comparisons."""
    records = []
    for lineno, line in enumerate(_data_text("casual_probe.jsonl").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        records.append(TurnRecord(id=int(obj["id"]), topic=obj["topic"],
                                  template_id=obj["template_id"],
                                  agent=obj["agent"], user=obj["user"],
                                  label=int(obj["label"]),
                                  category=obj.get("category")))
    return records


def category_families(templates) -> list[str]:
    """Category names in template-file order of first appearance."""
    seen: list[str] = []
    for t in templates:
        if t.category is not None and t.category not in seen:
            seen.append(t.category)
    return seen


def category_code(k: int, dim: int) -> np.ndarray:
    """Orthogonal unit code for category k: the k-th basis vector."""
    if not 0 <= k < dim:
        raise ValueError(f"category index {k} does not fit dim {dim}")
    code = np.zeros(dim, dtype=np.float64)
    code[k] = 1.0
    return code


def make_category_corpus(templates, topics, K: int, gaps, seed: int,
                         sequences_per_gap: int = 60,
                         length_per_gap=None,
                         code_dim: int = 64) -> list[list[TurnEvent]]:
    """Event sequences for controller training.

    Every gap-th event is a preference turn carrying a category target and
    the category's orthogonal code as its embedding; all other events are
    neutral no-ops.  Sequence length defaults to 3*gap (three preference
    events per sequence).
    """
    families = category_families(templates)
    if K > len(families):
        raise ValueError(f"K={K} exceeds the {len(families)} category-coded "
                         f"template families")
    for gap in gaps:
        if gap < 1:
            raise ValueError(f"gap must be >= 1, got {gap}")
    rng = Rng(seed)
    corpus: list[list[TurnEvent]] = []
    for gap in gaps:
        length = (length_per_gap(gap) if callable(length_per_gap)
                  else length_per_gap or 3 * gap)
        for _ in range(sequences_per_gap):
            events = []
            for j in range(length):
                if (j + 1) % gap == 0:
                    cat = rng.randint(K)
                    events.append(TurnEvent(is_preference=True,
                                            embedding=category_code(cat, code_dim),
                                            category=cat))
                else:
                    events.append(TurnEvent(is_preference=False))
            corpus.append(events)
    return corpus
