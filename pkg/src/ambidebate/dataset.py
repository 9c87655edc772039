"""Paired ambiguous / unambiguous instruction generation.

Every entry is built from one slot assignment rendered twice: once with
the precise term and once with a vague substitute in exactly one slot
(quantity, object noun, object color or spatial preposition). Character
spans of the substituted slot are recorded while rendering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import IO, Any, Callable, Iterable, Mapping

from .errors import SchemaError, VocabularyExhausted
from .rng import PortableRng

RETRY_BUDGET = 1000
CATEGORIES = ("numerical", "attribute", "spatial")

_NUMBER_WORDS = {
    "a": 1,
    "a single": 1,
    "one": 1,
    "single": 1,
    "two": 2,
    "three": 3,
    "four": 4,
    "five": 5,
}


class AmbiguityType(str, Enum):
    NUMERICAL = "numerical"
    ATTRIBUTE_NOUN = "attribute_noun"
    ATTRIBUTE_COLOR = "attribute_color"
    SPATIAL = "spatial"

    @property
    def category(self) -> str:
        """Reporting category; both attribute variants collapse to ``attribute``."""
        if self in (AmbiguityType.ATTRIBUTE_NOUN, AmbiguityType.ATTRIBUTE_COLOR):
            return "attribute"
        return self.value


# ---------------------------------------------------------------------------
# Scenario and vocabulary
# ---------------------------------------------------------------------------


def _count_phrase(count: int, color: str, noun: str) -> str:
    return f"{count} {color} {noun if count == 1 else noun + 's'}"


def render_description(block_inventory: Mapping[str, int], bowl_inventory: Mapping[str, int]) -> str:
    items = [_count_phrase(n, c, "block") for c, n in block_inventory.items() if n > 0]
    items += [_count_phrase(n, c, "bowl") for c, n in bowl_inventory.items() if n > 0]
    if not items:
        return "The table is empty."
    if len(items) == 1:
        listing = items[0]
    else:
        listing = ", ".join(items[:-1]) + ", and " + items[-1]
    return f"A table holds {listing}. Nothing else is on the table."


@dataclass(frozen=True)
class ScenarioContext:
    description: str
    block_inventory: dict[str, int]
    bowl_inventory: dict[str, int]

    @classmethod
    def from_inventory(cls, blocks: Mapping[str, int], bowls: Mapping[str, int]) -> "ScenarioContext":
        return cls(render_description(blocks, bowls), dict(blocks), dict(bowls))

    @classmethod
    def default(cls) -> "ScenarioContext":
        colors = ("red", "yellow", "green")
        return cls.from_inventory({c: 3 for c in colors}, {c: 1 for c in colors})

    def inventory(self, noun: str) -> dict[str, int]:
        if noun == "block":
            return self.block_inventory
        if noun == "bowl":
            return self.bowl_inventory
        raise KeyError(noun)

    def to_dict(self) -> dict[str, Any]:
        return {
            "description": self.description,
            "block_inventory": dict(self.block_inventory),
            "bowl_inventory": dict(self.bowl_inventory),
        }


@dataclass(frozen=True)
class Vocabulary:
    actions: list[str]
    colors: list[str]
    vague_quantities: list[str]
    precise_quantities: list[str]
    general_nouns: list[str]
    color_synonyms: dict[str, list[str]]
    precise_prepositions: list[str]
    vague_prepositions: list[str]

    def __post_init__(self) -> None:
        for name in (
            "actions",
            "colors",
            "vague_quantities",
            "precise_quantities",
            "general_nouns",
            "precise_prepositions",
            "vague_prepositions",
        ):
            if not getattr(self, name):
                raise ValueError(f"vocabulary list {name!r} is empty")
        missing = [c for c in self.colors if not self.color_synonyms.get(c)]
        if missing:
            raise ValueError(f"color_synonyms missing for {missing}")
        for term in self.precise_quantities:
            if term != "all" and term not in _NUMBER_WORDS:
                raise ValueError(f"unknown precise quantity {term!r}")
        if set(self.vague_quantities) & set(self.precise_quantities):
            raise ValueError("vague and precise quantities overlap")
        if set(self.vague_prepositions) & set(self.precise_prepositions):
            raise ValueError("vague and precise prepositions overlap")
        for color, synonyms in self.color_synonyms.items():
            if set(synonyms) & set(self.colors):
                raise ValueError(f"synonyms of {color!r} include a base color")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Vocabulary":
        return cls(
            actions=list(data["actions"]),
            colors=list(data["colors"]),
            vague_quantities=list(data["vague_quantities"]),
            precise_quantities=list(data["precise_quantities"]),
            general_nouns=list(data["general_nouns"]),
            color_synonyms={k: list(v) for k, v in data["color_synonyms"].items()},
            precise_prepositions=list(data["precise_prepositions"]),
            vague_prepositions=list(data["vague_prepositions"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise SchemaError(str(path), f"not valid JSON: {exc}") from exc
        except KeyError as exc:
            raise SchemaError(str(path), f"missing vocabulary list {exc.args[0]!r}") from exc
        except (TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(str(path), str(exc)) from exc

    @classmethod
    def default(cls) -> "Vocabulary":
        text = resources.files("ambidebate").joinpath("data/vocabulary.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))


def resolve_quantity(term: str, available: int) -> int:
    """Number of objects a precise quantity term denotes; ``all`` resolves against inventory."""
    if term == "all":
        return available
    return _NUMBER_WORDS[term]


def plural(noun: str, count: int) -> str:
    return noun if count == 1 else noun + "s"


# ---------------------------------------------------------------------------
# Entries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlotRecord:
    action: str
    object_noun: str
    object_color: str
    quantity_precise: str
    quantity_count: int
    preposition_precise: str
    landmark_noun: str
    landmark_color: str
    ambiguous_span: tuple[int, int]
    unambiguous_span: tuple[int, int]
    quantity_vague: str | None = None
    noun_vague: str | None = None
    color_vague: str | None = None
    preposition_vague: str | None = None

    def active_substitutions(self) -> dict[str, str]:
        subs = {
            "quantity_vague": self.quantity_vague,
            "noun_vague": self.noun_vague,
            "color_vague": self.color_vague,
            "preposition_vague": self.preposition_vague,
        }
        return {k: v for k, v in subs.items() if v is not None}

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "object_noun": self.object_noun,
            "object_color": self.object_color,
            "quantity_precise": self.quantity_precise,
            "quantity_count": self.quantity_count,
            "quantity_vague": self.quantity_vague,
            "noun_vague": self.noun_vague,
            "color_vague": self.color_vague,
            "preposition_precise": self.preposition_precise,
            "preposition_vague": self.preposition_vague,
            "landmark_noun": self.landmark_noun,
            "landmark_color": self.landmark_color,
            "ambiguous_span": list(self.ambiguous_span),
            "unambiguous_span": list(self.unambiguous_span),
        }


_ACTIVE_SLOT = {
    AmbiguityType.NUMERICAL: "quantity_vague",
    AmbiguityType.ATTRIBUTE_NOUN: "noun_vague",
    AmbiguityType.ATTRIBUTE_COLOR: "color_vague",
    AmbiguityType.SPATIAL: "preposition_vague",
}


@dataclass(frozen=True)
class InstructionEntry:
    id: str
    context: ScenarioContext
    ambiguous: str
    unambiguous: str
    ambiguity_type: AmbiguityType
    slots: SlotRecord

    def substituted_terms(self) -> tuple[str, str]:
        """``(vague_term, precise_term)`` occupying the recorded spans."""
        s = self.slots
        t = self.ambiguity_type
        if t is AmbiguityType.NUMERICAL:
            return s.quantity_vague or "", s.quantity_precise
        if t is AmbiguityType.ATTRIBUTE_NOUN:
            return s.noun_vague or "", plural(s.object_noun, s.quantity_count)
        if t is AmbiguityType.ATTRIBUTE_COLOR:
            return s.color_vague or "", s.object_color
        return s.preposition_vague or "", s.preposition_precise

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "context": self.context.to_dict(),
            "ambiguous_instruction": self.ambiguous,
            "unambiguous_instruction": self.unambiguous,
            "ambiguity_type": self.ambiguity_type.value,
            "slots": self.slots.to_dict(),
        }


def _render(parts: list[str], hot: int) -> tuple[str, tuple[int, int]]:
    start = sum(len(p) + 1 for p in parts[:hot])
    return " ".join(parts), (start, start + len(parts[hot]))


def _build(
    entry_id: str,
    context: ScenarioContext,
    kind: AmbiguityType,
    *,
    action: str,
    color: str,
    quantity: str,
    count: int,
    preposition: str,
    landmark: tuple[str, str],
    vague: str,
) -> InstructionEntry:
    noun = "block"
    precise_parts = [action, quantity, color, plural(noun, count), preposition, "the", landmark[1], landmark[0]]
    hot = {
        AmbiguityType.NUMERICAL: 1,
        AmbiguityType.ATTRIBUTE_COLOR: 2,
        AmbiguityType.ATTRIBUTE_NOUN: 3,
        AmbiguityType.SPATIAL: 4,
    }[kind]
    vague_parts = list(precise_parts)
    vague_parts[hot] = vague
    unambiguous, u_span = _render(precise_parts, hot)
    ambiguous, a_span = _render(vague_parts, hot)
    slots = SlotRecord(
        action=action,
        object_noun=noun,
        object_color=color,
        quantity_precise=quantity,
        quantity_count=count,
        preposition_precise=preposition,
        landmark_noun=landmark[0],
        landmark_color=landmark[1],
        ambiguous_span=a_span,
        unambiguous_span=u_span,
        **{_ACTIVE_SLOT[kind]: vague},
    )
    return InstructionEntry(entry_id, context, ambiguous, unambiguous, kind, slots)


def _landmarks(context: ScenarioContext, vocab: Vocabulary, exclude: tuple[str, str]) -> list[tuple[str, str]]:
    out = []
    for noun in ("bowl", "block"):
        inv = context.inventory(noun)
        out += [(noun, c) for c in vocab.colors if inv.get(c, 0) >= 1 and (noun, c) != exclude]
    if not out:
        raise ValueError("scenario has no landmark distinct from the manipulated object")
    return out


def _block_colors(context: ScenarioContext, vocab: Vocabulary, minimum: int) -> list[str]:
    colors = [c for c in vocab.colors if context.block_inventory.get(c, 0) >= minimum]
    if not colors:
        raise ValueError(f"scenario needs a block color with at least {minimum} blocks")
    return colors


def _unique(
    build: Callable[[], InstructionEntry],
    seen: set[str] | None,
    retry_budget: int,
) -> InstructionEntry:
    for _ in range(retry_budget):
        entry = build()
        if seen is None or entry.ambiguous not in seen:
            if seen is not None:
                seen.add(entry.ambiguous)
            return entry
    raise VocabularyExhausted(f"no new distinct instruction after {retry_budget} attempts ({len(seen or ())} already used)")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def generate_numerical(
    rng: PortableRng,
    vocab: Vocabulary,
    context: ScenarioContext,
    *,
    entry_id: str = "numerical",
    seen: set[str] | None = None,
    retry_budget: int = RETRY_BUDGET,
) -> InstructionEntry:
    """Vague quantity ("a few red blocks") against a precise one ("two red blocks")."""
    colors = _block_colors(context, vocab, 2)

    def build() -> InstructionEntry:
        action = rng.choice(vocab.actions)
        color = rng.choice(colors)
        available = context.block_inventory[color]
        quantities = [q for q in vocab.precise_quantities if 2 <= resolve_quantity(q, available) <= available]
        if not quantities:
            raise VocabularyExhausted("no plural precise quantity fits the inventory")
        quantity = rng.choice(quantities)
        vague = rng.choice(vocab.vague_quantities)
        preposition = rng.choice(vocab.precise_prepositions)
        landmark = rng.choice(_landmarks(context, vocab, ("block", color)))
        return _build(
            entry_id,
            context,
            AmbiguityType.NUMERICAL,
            action=action,
            color=color,
            quantity=quantity,
            count=resolve_quantity(quantity, available),
            preposition=preposition,
            landmark=landmark,
            vague=vague,
        )

    return _unique(build, seen, retry_budget)


def generate_attribute(
    rng: PortableRng,
    vocab: Vocabulary,
    context: ScenarioContext,
    sub: str,
    *,
    entry_id: str = "attribute",
    seen: set[str] | None = None,
    retry_budget: int = RETRY_BUDGET,
) -> InstructionEntry:
    """Single-object instruction with the noun (``sub="noun"``) or color (``sub="color"``) blurred."""
    if sub not in ("noun", "color"):
        raise ValueError(f"sub must be 'noun' or 'color', got {sub!r}")
    kind = AmbiguityType.ATTRIBUTE_NOUN if sub == "noun" else AmbiguityType.ATTRIBUTE_COLOR
    singles = [q for q in vocab.precise_quantities if q != "all" and resolve_quantity(q, 1) == 1]
    if not singles:
        raise ValueError("vocabulary has no singular precise quantity")
    colors = _block_colors(context, vocab, 1)

    def build() -> InstructionEntry:
        action = rng.choice(vocab.actions)
        color = rng.choice(colors)
        quantity = singles[0]
        preposition = rng.choice(vocab.precise_prepositions)
        landmark = rng.choice(_landmarks(context, vocab, ("block", color)))
        vague = rng.choice(vocab.general_nouns) if sub == "noun" else rng.choice(vocab.color_synonyms[color])
        return _build(
            entry_id,
            context,
            kind,
            action=action,
            color=color,
            quantity=quantity,
            count=1,
            preposition=preposition,
            landmark=landmark,
            vague=vague,
        )

    return _unique(build, seen, retry_budget)


def generate_spatial(
    rng: PortableRng,
    vocab: Vocabulary,
    context: ScenarioContext,
    *,
    entry_id: str = "spatial",
    seen: set[str] | None = None,
    retry_budget: int = RETRY_BUDGET,
) -> InstructionEntry:
    """Precise preposition ("on the yellow bowl") against a vague one ("near the yellow bowl")."""
    colors = _block_colors(context, vocab, 1)

    def build() -> InstructionEntry:
        action = rng.choice(vocab.actions)
        color = rng.choice(colors)
        available = context.block_inventory[color]
        quantities = [q for q in vocab.precise_quantities if 1 <= resolve_quantity(q, available) <= available]
        quantity = rng.choice(quantities)
        preposition = rng.choice(vocab.precise_prepositions)
        vague = rng.choice(vocab.vague_prepositions)
        landmark = rng.choice(_landmarks(context, vocab, ("block", color)))
        return _build(
            entry_id,
            context,
            AmbiguityType.SPATIAL,
            action=action,
            color=color,
            quantity=quantity,
            count=resolve_quantity(quantity, available),
            preposition=preposition,
            landmark=landmark,
            vague=vague,
        )

    return _unique(build, seen, retry_budget)


def generate_dataset(
    seed: int,
    counts: Mapping[str, int],
    vocab: Vocabulary | None = None,
    context: ScenarioContext | None = None,
    *,
    retry_budget: int = RETRY_BUDGET,
) -> list[InstructionEntry]:
    """Build ``counts[category]`` unique entries per category.

    Categories are generated in the order numerical, attribute, spatial,
    each from its own seeded stream. Attribute entries alternate noun and
    color substitution, starting with noun. Ids are ``entry-0001`` onward.
    """
    unknown = set(counts) - set(CATEGORIES)
    if unknown:
        raise ValueError(f"unknown categories: {sorted(unknown)}")
    if any(n < 0 for n in counts.values()):
        raise ValueError("counts must be non-negative")
    vocab = vocab or Vocabulary.default()
    context = context or ScenarioContext.default()
    seen: set[str] = set()
    entries: list[InstructionEntry] = []

    def next_id() -> str:
        return f"entry-{len(entries) + 1:04d}"

    for category in CATEGORIES:
        rng = PortableRng(seed, "dataset", category)
        for i in range(counts.get(category, 0)):
            kw = dict(entry_id=next_id(), seen=seen, retry_budget=retry_budget)
            if category == "numerical":
                entry = generate_numerical(rng, vocab, context, **kw)
            elif category == "attribute":
                entry = generate_attribute(rng, vocab, context, "noun" if i % 2 == 0 else "color", **kw)
            else:
                entry = generate_spatial(rng, vocab, context, **kw)
            entries.append(entry)
    return entries


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def dumps_dataset(entries: Iterable[InstructionEntry]) -> str:
    return json.dumps([e.to_dict() for e in entries], indent=2, ensure_ascii=False) + "\n"


def write_dataset(entries: Iterable[InstructionEntry], destination: str | Path | IO[str]) -> None:
    text = dumps_dataset(entries)
    if hasattr(destination, "write"):
        destination.write(text)  # type: ignore[union-attr]
        return
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def read_dataset(source: str | Path | IO[str]) -> list[InstructionEntry]:
    if hasattr(source, "read"):
        text = source.read()  # type: ignore[union-attr]
    else:
        text = Path(source).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, list):
        raise SchemaError("", "dataset must be a JSON array")
    entries = [entry_from_dict(item, f"[{i}]") for i, item in enumerate(data)]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise SchemaError("", "duplicate entry ids")
    return entries


def _field(obj: Any, key: str, path: str, kind: type | tuple[type, ...], optional: bool = False) -> Any:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    if key not in obj:
        if optional:
            return None
        raise SchemaError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if value is None and optional:
        return None
    # bool is an int subclass; counts must not accept it
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SchemaError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def _span(obj: Any, key: str, path: str, text: str) -> tuple[int, int]:
    value = _field(obj, key, path, list)
    where = f"{path}.{key}"
    if len(value) != 2 or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise SchemaError(where, "span must be [start, end] integers")
    start, end = value
    if not 0 <= start < end <= len(text):
        raise SchemaError(where, f"span [{start}, {end}] is inverted, empty or outside the instruction (length {len(text)})")
    return start, end


def _inventory(obj: Any, key: str, path: str) -> dict[str, int]:
    inv = _field(obj, key, path, dict)
    for color, n in inv.items():
        if not isinstance(n, int) or isinstance(n, bool) or n < 0:
            raise SchemaError(f"{path}.{key}.{color}", "count must be a non-negative integer")
    return dict(inv)


def entry_from_dict(obj: Any, path: str = "") -> InstructionEntry:
    entry_id = _field(obj, "id", path, str)
    ctx_obj = _field(obj, "context", path, dict)
    ctx_path = f"{path}.context"
    context = ScenarioContext(
        description=_field(ctx_obj, "description", ctx_path, str),
        block_inventory=_inventory(ctx_obj, "block_inventory", ctx_path),
        bowl_inventory=_inventory(ctx_obj, "bowl_inventory", ctx_path),
    )
    ambiguous = _field(obj, "ambiguous_instruction", path, str)
    unambiguous = _field(obj, "unambiguous_instruction", path, str)
    raw_type = _field(obj, "ambiguity_type", path, str)
    try:
        kind = AmbiguityType(raw_type)
    except ValueError:
        raise SchemaError(f"{path}.ambiguity_type", f"unknown ambiguity type {raw_type!r}") from None
    s = _field(obj, "slots", path, dict)
    sp = f"{path}.slots"
    slots = SlotRecord(
        action=_field(s, "action", sp, str),
        object_noun=_field(s, "object_noun", sp, str),
        object_color=_field(s, "object_color", sp, str),
        quantity_precise=_field(s, "quantity_precise", sp, str),
        quantity_count=_field(s, "quantity_count", sp, int),
        quantity_vague=_field(s, "quantity_vague", sp, str, optional=True),
        noun_vague=_field(s, "noun_vague", sp, str, optional=True),
        color_vague=_field(s, "color_vague", sp, str, optional=True),
        preposition_precise=_field(s, "preposition_precise", sp, str),
        preposition_vague=_field(s, "preposition_vague", sp, str, optional=True),
        landmark_noun=_field(s, "landmark_noun", sp, str),
        landmark_color=_field(s, "landmark_color", sp, str),
        ambiguous_span=_span(s, "ambiguous_span", sp, ambiguous),
        unambiguous_span=_span(s, "unambiguous_span", sp, unambiguous),
    )
    active = slots.active_substitutions()
    if list(active) != [_ACTIVE_SLOT[kind]]:
        raise SchemaError(sp, f"{kind.value} entry must set exactly {_ACTIVE_SLOT[kind]}, found {sorted(active)}")
    entry = InstructionEntry(entry_id, context, ambiguous, unambiguous, kind, slots)
    if ambiguous == unambiguous:
        raise SchemaError(f"{path}.ambiguous_instruction", "identical to the unambiguous instruction")
    a0, a1 = slots.ambiguous_span
    u0, u1 = slots.unambiguous_span
    vague, precise = entry.substituted_terms()
    if ambiguous[a0:a1] != vague:
        raise SchemaError(f"{sp}.ambiguous_span", f"covers {ambiguous[a0:a1]!r}, expected {vague!r}")
    if unambiguous[u0:u1] != precise:
        raise SchemaError(f"{sp}.unambiguous_span", f"covers {unambiguous[u0:u1]!r}, expected {precise!r}")
    if ambiguous[:a0] != unambiguous[:u0] or ambiguous[a1:] != unambiguous[u1:]:
        raise SchemaError(sp, "instructions differ outside the recorded spans")
    return entry
