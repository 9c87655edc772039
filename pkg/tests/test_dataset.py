from __future__ import annotations

import io
import json
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambidebate.dataset import (
    AmbiguityType,
    ScenarioContext,
    Vocabulary,
    dumps_dataset,
    generate_attribute,
    generate_dataset,
    generate_numerical,
    generate_spatial,
    read_dataset,
    resolve_quantity,
    write_dataset,
)
from ambidebate.errors import SchemaError, VocabularyExhausted
from ambidebate.rng import PortableRng

VOCAB = Vocabulary.default()
CTX = ScenarioContext.default()


def token_diff(a: str, b: str) -> tuple[tuple[int, int], tuple[int, int]]:
    """Minimal differing token window of two strings, by stripping common prefix/suffix tokens."""
    ta, tb = a.split(" "), b.split(" ")
    p = 0
    while p < min(len(ta), len(tb)) and ta[p] == tb[p]:
        p += 1
    s = 0
    while s < min(len(ta), len(tb)) - p and ta[-1 - s] == tb[-1 - s]:
        s += 1
    return (p, len(ta) - s), (p, len(tb) - s)


def char_to_token_window(text: str, span: tuple[int, int]) -> tuple[int, int]:
    start, end = span
    return len(text[:start].split(" ")) - 1, len(text[:end].split(" "))


def check_invariants(entry) -> None:
    s = entry.slots
    assert entry.ambiguous != entry.unambiguous
    # pair difference: identical outside the recorded spans, diff window inside them
    a0, a1 = s.ambiguous_span
    u0, u1 = s.unambiguous_span
    assert entry.ambiguous[:a0] == entry.unambiguous[:u0]
    assert entry.ambiguous[a1:] == entry.unambiguous[u1:]
    (da0, da1), (du0, du1) = token_diff(entry.ambiguous, entry.unambiguous)
    ta0, ta1 = char_to_token_window(entry.ambiguous, s.ambiguous_span)
    tu0, tu1 = char_to_token_window(entry.unambiguous, s.unambiguous_span)
    assert ta0 <= da0 < da1 <= ta1
    assert tu0 <= du0 < du1 <= tu1
    # category fidelity
    vague, precise = entry.ambiguous[a0:a1], entry.unambiguous[u0:u1]
    kind = entry.ambiguity_type
    active = s.active_substitutions()
    assert len(active) == 1
    if kind is AmbiguityType.NUMERICAL:
        assert vague in VOCAB.vague_quantities and precise in VOCAB.precise_quantities
        assert active == {"quantity_vague": vague}
    elif kind is AmbiguityType.ATTRIBUTE_NOUN:
        assert vague in VOCAB.general_nouns and precise == "block"
        assert active == {"noun_vague": vague}
    elif kind is AmbiguityType.ATTRIBUTE_COLOR:
        assert vague in VOCAB.color_synonyms[s.object_color] and precise == s.object_color
        assert active == {"color_vague": vague}
    else:
        assert vague in VOCAB.vague_prepositions and precise in VOCAB.precise_prepositions
        assert active == {"preposition_vague": vague}
    # landmark distinctness
    assert (s.landmark_noun, s.landmark_color) != (s.object_noun, s.object_color)
    # quantity satisfiable by inventory
    assert 1 <= s.quantity_count <= entry.context.block_inventory[s.object_color]


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------


def test_default_inventory():
    assert CTX.block_inventory == {"red": 3, "yellow": 3, "green": 3}
    assert CTX.bowl_inventory == {"red": 1, "yellow": 1, "green": 1}


@pytest.mark.parametrize(
    "blocks,bowls",
    [
        ({"red": 3, "yellow": 3, "green": 3}, {"red": 1, "yellow": 1, "green": 1}),
        ({"red": 1, "blue": 2}, {"blue": 1}),
        ({"green": 5}, {}),
    ],
)
def test_description_renders_inventory(blocks, bowls):
    ctx = ScenarioContext.from_inventory(blocks, bowls)
    stated = {(noun, color): int(n) for n, color, noun in re.findall(r"(\d+) (\w+) (block|bowl)s?", ctx.description)}
    expected = {("block", c): n for c, n in blocks.items()} | {("bowl", c): n for c, n in bowls.items()}
    assert stated == expected


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def test_numerical_example_instantiation():
    e = generate_numerical(PortableRng(577), VOCAB, CTX)
    assert e.unambiguous == "put two red blocks to the left of the green bowl"
    assert e.ambiguous == "put a few red blocks to the left of the green bowl"
    assert e.ambiguity_type is AmbiguityType.NUMERICAL


def test_numerical_deterministic():
    assert generate_numerical(PortableRng(577), VOCAB, CTX) == generate_numerical(PortableRng(577), VOCAB, CTX)


def test_numerical_all_resolves_against_inventory():
    e = generate_numerical(PortableRng(0), VOCAB, CTX)
    assert e.slots.quantity_precise == "all"
    assert e.unambiguous.startswith("set all yellow blocks")
    # oracle: enumerate the scene's objects and count blocks of that color
    scene = [(noun, color) for noun, inv in (("block", CTX.block_inventory), ("bowl", CTX.bowl_inventory)) for color, n in inv.items() for _ in range(n)]
    assert e.slots.quantity_count == sum(1 for obj in scene if obj == ("block", e.slots.object_color)) == 3


def test_attribute_noun_example():
    e = generate_attribute(PortableRng(27), VOCAB, CTX, "noun")
    assert e.unambiguous.startswith("place a single red block ")
    assert e.ambiguous.startswith("place a single red thing ")
    assert e.ambiguity_type is AmbiguityType.ATTRIBUTE_NOUN


def test_attribute_color_example():
    e = generate_attribute(PortableRng(2), VOCAB, CTX, "color")
    assert " red block " in e.unambiguous and " crimson block " in e.ambiguous
    assert e.slots.object_noun == "block"
    assert e.ambiguity_type is AmbiguityType.ATTRIBUTE_COLOR


def test_attribute_rejects_unknown_sub():
    with pytest.raises(ValueError):
        generate_attribute(PortableRng(0), VOCAB, CTX, "size")


@pytest.mark.parametrize(
    "seed,precise,vague",
    [(363, "on the yellow bowl", "near the yellow bowl"), (44, "to the left of the green block", "lateral to the green block")],
)
def test_spatial_examples(seed, precise, vague):
    e = generate_spatial(PortableRng(seed), VOCAB, CTX)
    assert e.unambiguous.endswith(precise)
    assert e.ambiguous.endswith(vague)
    assert e.ambiguous.replace(e.slots.preposition_vague, e.slots.preposition_precise) == e.unambiguous


def test_attribute_diff_is_one_token():
    for seed in range(50):
        for sub in ("noun", "color"):
            e = generate_attribute(PortableRng(seed), VOCAB, CTX, sub)
            (a0, a1), (u0, u1) = token_diff(e.ambiguous, e.unambiguous)
            assert a1 - a0 == 1 and u1 - u0 == 1


def test_numerical_needs_plural_color():
    ctx = ScenarioContext.from_inventory({"red": 1}, {"red": 1})
    with pytest.raises(ValueError):
        generate_numerical(PortableRng(0), VOCAB, ctx)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(min_value=-(2**63), max_value=2**64 - 1))
def test_every_generator_satisfies_invariants(seed):
    rng = PortableRng(seed)
    for entry in (
        generate_numerical(rng, VOCAB, CTX),
        generate_attribute(rng, VOCAB, CTX, "noun"),
        generate_attribute(rng, VOCAB, CTX, "color"),
        generate_spatial(rng, VOCAB, CTX),
    ):
        check_invariants(entry)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def test_dataset_size_oracle():
    """Smallest entry count reproducing every reported percentage as an integer fraction is 60."""
    reported_success = [80.0, 13.3, 28.3, 76.7, 40.0, 48.3]
    reported_nonconsensus = [1.7, 31.7, 33.3]

    def reachable(pct: float, n: int) -> bool:
        return any(abs(100 * k / n - pct) < 0.05 for k in range(n + 1))

    sizes = [
        n
        for n in range(1, 301)
        if all(reachable(p, n) for p in reported_success + reported_nonconsensus)
        and n % 3 == 0
        and any(abs(100 * k / (n - 1) - 64.4) < 0.05 for k in range(n))
    ]
    assert sizes[0] == 60


def test_dataset_counts_and_ids(dataset60):
    assert len(dataset60) == 60
    assert [e.id for e in dataset60] == [f"entry-{i:04d}" for i in range(1, 61)]
    cats = [e.ambiguity_type.category for e in dataset60]
    assert cats == ["numerical"] * 20 + ["attribute"] * 20 + ["spatial"] * 20
    kinds = [e.ambiguity_type for e in dataset60[20:40]]
    assert kinds.count(AmbiguityType.ATTRIBUTE_NOUN) == kinds.count(AmbiguityType.ATTRIBUTE_COLOR) == 10


def test_dataset_invariants(dataset60):
    for e in dataset60:
        check_invariants(e)
    assert len({e.ambiguous for e in dataset60}) == 60


def test_empty_counts():
    assert generate_dataset(1, {"numerical": 0, "attribute": 0, "spatial": 0}) == []


def test_dataset_byte_identical_for_same_seed():
    counts = {"numerical": 20, "attribute": 20, "spatial": 20}
    assert dumps_dataset(generate_dataset(11, counts)) == dumps_dataset(generate_dataset(11, counts))
    assert dumps_dataset(generate_dataset(11, counts)) != dumps_dataset(generate_dataset(12, counts))


def test_categories_use_independent_streams():
    a = generate_dataset(5, {"numerical": 3, "spatial": 4})
    b = generate_dataset(5, {"numerical": 9, "spatial": 4})
    assert [e.ambiguous for e in a[3:]] == [e.ambiguous for e in b[9:]]


def test_vocabulary_exhausted():
    vocab = Vocabulary.from_dict(
        {
            "actions": ["put"],
            "colors": ["red"],
            "vague_quantities": ["some"],
            "precise_quantities": ["a single", "two", "three", "all"],
            "general_nouns": ["item"],
            "color_synonyms": {"red": ["crimson"]},
            "precise_prepositions": ["on"],
            "vague_prepositions": ["near"],
        }
    )
    ctx = ScenarioContext.from_inventory({"red": 3}, {"red": 1})
    # one action, color, vague term, preposition and landmark: a single distinct numerical instruction
    assert len(generate_dataset(0, {"numerical": 1}, vocab, ctx)) == 1
    with pytest.raises(VocabularyExhausted):
        generate_dataset(0, {"numerical": 2}, vocab, ctx)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        generate_dataset(0, {"numerical": -1})


@pytest.mark.parametrize(
    "patch",
    [
        {"actions": []},
        {"color_synonyms": {"red": ["crimson"], "yellow": ["golden"]}},
        {"vague_prepositions": ["on"]},
    ],
)
def test_vocabulary_validation(patch):
    data = json.loads(json.dumps(VOCAB.__dict__))
    data.update(patch)
    with pytest.raises(ValueError):
        Vocabulary.from_dict(data)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_round_trip(dataset60, tmp_path):
    path = tmp_path / "ds.json"
    write_dataset(dataset60, path)
    assert read_dataset(path) == dataset60
    buf = io.StringIO()
    write_dataset(dataset60, buf)
    assert buf.getvalue() == path.read_text(encoding="utf-8")


def test_stable_key_order(dataset60):
    obj = json.loads(dumps_dataset(dataset60[:1]))[0]
    assert list(obj) == ["id", "context", "ambiguous_instruction", "unambiguous_instruction", "ambiguity_type", "slots"]


def _doc(dataset60):
    return json.loads(dumps_dataset(dataset60[:3]))


def test_missing_ambiguity_type(dataset60):
    doc = _doc(dataset60)
    del doc[1]["ambiguity_type"]
    with pytest.raises(SchemaError) as exc:
        read_dataset(io.StringIO(json.dumps(doc)))
    assert exc.value.path == "[1].ambiguity_type"


@pytest.mark.parametrize("span", [[12, 5], [3, 3], [0, 500], [-1, 4]])
def test_bad_span_indices(dataset60, span):
    doc = _doc(dataset60)
    doc[0]["slots"]["ambiguous_span"] = span
    with pytest.raises(SchemaError) as exc:
        read_dataset(io.StringIO(json.dumps(doc)))
    assert exc.value.path == "[0].slots.ambiguous_span"


def test_span_not_covering_term(dataset60):
    doc = _doc(dataset60)
    a0, a1 = doc[0]["slots"]["ambiguous_span"]
    doc[0]["slots"]["ambiguous_span"] = [a0 + 1, a1]
    with pytest.raises(SchemaError):
        read_dataset(io.StringIO(json.dumps(doc)))


def test_two_active_substitutions_rejected(dataset60):
    doc = _doc(dataset60)
    doc[0]["slots"]["color_vague"] = "crimson"
    with pytest.raises(SchemaError, match="exactly quantity_vague"):
        read_dataset(io.StringIO(json.dumps(doc)))


def test_unknown_type_and_bad_json():
    with pytest.raises(SchemaError):
        read_dataset(io.StringIO("[{"))
    with pytest.raises(SchemaError):
        read_dataset(io.StringIO("{}"))


def test_resolve_quantity():
    assert resolve_quantity("all", 3) == 3
    assert resolve_quantity("a single", 3) == 1
    assert resolve_quantity("two", 3) == 2
