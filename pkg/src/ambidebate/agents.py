"""Role prompts and the line-marker response grammar.

Responses use four case-insensitive line markers::

    REASONING: <free text, may continue on following lines>
    VERDICT: CLEAR
    VERDICT: QUESTION: <one clarifying question>
    STANCE: AGREE | DISAGREE
    ALT_QUESTION: <question> | NONE

Text before the first marker is ignored. Proposals need REASONING and
VERDICT; feedback needs STANCE. Any marker repeated is an error.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import InstructionEntry
from .errors import ParseError

TEMPLATE_NAMES = (
    "baseline_system",
    "baseline_user",
    "leader_system",
    "leader_user",
    "leader_revision_user",
    "follower_system",
    "follower_user",
)


class Role(str, Enum):
    BASELINE = "baseline"
    LEADER = "leader"
    FOLLOWER = "follower"


class Stance(str, Enum):
    AGREE = "agree"
    DISAGREE = "disagree"


@dataclass(frozen=True)
class AgentConfig:
    model_name: str
    temperature: float = 0.5
    max_tokens: int = 350
    reasoning_sentence_limit: int = 4

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.reasoning_sentence_limit < 1:
            raise ValueError("reasoning_sentence_limit must be >= 1")


@dataclass(frozen=True)
class Proposal:
    """Leader or baseline output. ``question is None`` means the verdict is Clear."""

    reasoning: str
    question: str | None = None

    def __post_init__(self) -> None:
        if not self.reasoning.strip():
            raise ValueError("reasoning must be non-empty")
        if self.question is not None and not self.question.strip():
            raise ValueError("a clarifying question must be non-empty")

    @property
    def is_clear(self) -> bool:
        return self.question is None

    @property
    def verdict(self) -> str:
        return "clear" if self.question is None else "question"

    def to_dict(self) -> dict:
        return {"reasoning": self.reasoning, "verdict": self.verdict, "question": self.question}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Proposal":
        if data["verdict"] not in ("clear", "question"):
            raise ValueError(f"unknown verdict {data['verdict']!r}")
        question = data.get("question") if data["verdict"] == "question" else None
        if data["verdict"] == "question" and question is None:
            raise ValueError("question verdict without a question")
        return cls(data["reasoning"], question)


@dataclass(frozen=True)
class FollowerFeedback:
    stance: Stance
    reasoning: str = ""
    alternative_question: str | None = None

    def __post_init__(self) -> None:
        if self.stance is Stance.AGREE and self.alternative_question is not None:
            raise ValueError("an agreeing follower gives no alternative question")

    @property
    def agrees(self) -> bool:
        return self.stance is Stance.AGREE

    def to_dict(self) -> dict:
        return {
            "stance": self.stance.value,
            "reasoning": self.reasoning,
            "alternative_question": self.alternative_question,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FollowerFeedback":
        return cls(Stance(data["stance"]), data.get("reasoning", ""), data.get("alternative_question"))


@dataclass(frozen=True)
class PromptBundle:
    """One prompt ready for a backend.

    ``entry`` and ``leader_proposal`` are carried for simulated backends
    that answer from structured state; they are not part of the prompt.
    """

    system_text: str
    user_text: str
    role: Role
    round_index: int
    entry_id: str = ""
    stream_key: str = ""
    entry: InstructionEntry | None = field(default=None, repr=False, compare=False)
    leader_proposal: Proposal | None = field(default=None, repr=False, compare=False)

    def messages(self) -> list[dict[str, str]]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]

    def to_dict(self) -> dict:
        return {
            "role": self.role.value,
            "round_index": self.round_index,
            "system": self.system_text,
            "user": self.user_text,
        }


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _default_templates() -> dict[str, str]:
    root = resources.files("ambidebate").joinpath("templates")
    return {name: root.joinpath(f"{name}.txt").read_text(encoding="utf-8").strip() for name in TEMPLATE_NAMES}


def load_templates(directory: str | Path | None = None) -> dict[str, str]:
    """Default templates, overridden by any ``<name>.txt`` found in ``directory``."""
    templates = dict(_default_templates())
    if directory is not None:
        for name in TEMPLATE_NAMES:
            path = Path(directory) / f"{name}.txt"
            if path.exists():
                templates[name] = path.read_text(encoding="utf-8").strip()
    return templates


def describe_proposal(proposal: Proposal) -> str:
    if proposal.is_clear:
        head = "The Leader declared the command clear; no clarifying question is needed."
    else:
        head = f'The Leader proposed the clarifying question: "{proposal.question}"'
    return f"{head}\nLeader's reasoning: {proposal.reasoning}"


def describe_feedback(feedback: Sequence[FollowerFeedback]) -> str:
    blocks = []
    for i, fb in enumerate(feedback, 1):
        alt = fb.alternative_question if fb.alternative_question else "none"
        reasoning = fb.reasoning or "(no reasoning given)"
        blocks.append(f"Follower {i}: {fb.stance.value.capitalize()}\n  Reasoning: {reasoning}\n  Alternative question: {alt}")
    return "\n".join(blocks)


def _bundle(role: Role, round_index: int, entry: InstructionEntry, system: str, user: str, **extra) -> PromptBundle:
    return PromptBundle(system, user, role, round_index, entry_id=entry.id, entry=entry, **extra)


def build_baseline_prompt(
    entry: InstructionEntry,
    config: AgentConfig,
    *,
    templates: Mapping[str, str] | None = None,
) -> PromptBundle:
    t = templates or _default_templates()
    user = t["baseline_user"].format(
        context=entry.context.description,
        instruction=entry.ambiguous,
        sentence_limit=config.reasoning_sentence_limit,
    )
    return _bundle(Role.BASELINE, 1, entry, t["baseline_system"], user)


def build_leader_prompt(
    entry: InstructionEntry,
    config: AgentConfig,
    prior_feedback: Sequence[FollowerFeedback] | None = None,
    *,
    previous_proposal: Proposal | None = None,
    round_index: int | None = None,
    templates: Mapping[str, str] | None = None,
) -> PromptBundle:
    """Round-1 prompt without ``prior_feedback``; revision prompt with it.

    The revision prompt needs the previous proposal and both followers'
    feedback from the previous round.
    """
    t = templates or _default_templates()
    if prior_feedback is None:
        if round_index not in (None, 1):
            raise ValueError("rounds after the first require prior feedback")
        user = t["leader_user"].format(
            context=entry.context.description,
            instruction=entry.ambiguous,
            sentence_limit=config.reasoning_sentence_limit,
        )
        return _bundle(Role.LEADER, 1, entry, t["leader_system"], user)

    if len(prior_feedback) != 2:
        raise ValueError(f"expected feedback from exactly 2 followers, got {len(prior_feedback)}")
    if previous_proposal is None:
        raise ValueError("a revision prompt needs the previous proposal")
    round_index = 2 if round_index is None else round_index
    if round_index < 2:
        raise ValueError("feedback is only available from round 2 on")
    user = t["leader_revision_user"].format(
        context=entry.context.description,
        instruction=entry.ambiguous,
        round=round_index,
        proposal=describe_proposal(previous_proposal),
        feedback=describe_feedback(prior_feedback),
        sentence_limit=config.reasoning_sentence_limit,
    )
    return _bundle(Role.LEADER, round_index, entry, t["leader_system"], user)


def build_follower_prompt(
    entry: InstructionEntry,
    config: AgentConfig,
    leader_proposal: Proposal,
    *,
    round_index: int = 1,
    templates: Mapping[str, str] | None = None,
) -> PromptBundle:
    t = templates or _default_templates()
    user = t["follower_user"].format(
        context=entry.context.description,
        instruction=entry.ambiguous,
        round=round_index,
        proposal=describe_proposal(leader_proposal),
        sentence_limit=config.reasoning_sentence_limit,
    )
    return _bundle(Role.FOLLOWER, round_index, entry, t["follower_system"], user, leader_proposal=leader_proposal)


# ---------------------------------------------------------------------------
# Marker grammar
# ---------------------------------------------------------------------------

_MARKER = re.compile(
    r"^[\s>*#_-]*(REASONING|VERDICT|STANCE|ALT[_ ]QUESTION)[\s*_]*:[\s*_]*(.*)$",
    re.IGNORECASE,
)
_NO_ALTERNATIVE = {"", "none", "n/a", "na", "no", "no alternative", "no alternative question", "-", "null"}


def _sections(raw: str, wanted: set[str]) -> dict[str, str]:
    sections: dict[str, list[str]] = {}
    current = None
    for line in raw.splitlines():
        m = _MARKER.match(line)
        if m:
            key = m.group(1).upper().replace(" ", "_")
            if key not in wanted:
                current = None
                continue
            if key in sections:
                raise ParseError(f"duplicate {key} marker", raw)
            sections[key] = [m.group(2)]
            current = key
        elif current is not None:
            sections[current].append(line)
    return {k: "\n".join(v).strip() for k, v in sections.items()}


def _first_line(text: str) -> str:
    for line in text.splitlines():
        if line.strip():
            return line.strip().strip("*_ ").strip()
    return ""


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'`":
        text = text[1:-1].strip()
    return text


def parse_proposal(raw: str) -> Proposal:
    if not raw or not raw.strip():
        raise ParseError("empty response", raw or "")
    sections = _sections(raw, {"REASONING", "VERDICT"})
    if "VERDICT" not in sections:
        raise ParseError("no VERDICT marker", raw)
    verdict = _first_line(sections["VERDICT"])
    has_clear = re.match(r"CLEAR\b", verdict, re.IGNORECASE) is not None
    q_match = re.search(r"QUESTION\s*:\s*(.*)$", verdict, re.IGNORECASE)
    if has_clear and q_match:
        raise ParseError("verdict is both CLEAR and QUESTION", raw)
    reasoning = sections.get("REASONING", "")
    if not reasoning:
        raise ParseError("missing or empty REASONING", raw)
    if has_clear:
        return Proposal(reasoning)
    if q_match:
        question = _unquote(q_match.group(1))
        if not question:
            raise ParseError("QUESTION verdict with an empty question", raw)
        return Proposal(reasoning, question)
    raise ParseError(f"unrecognised verdict {verdict!r}", raw)


def parse_feedback(raw: str) -> FollowerFeedback:
    if not raw or not raw.strip():
        raise ParseError("empty response", raw or "")
    sections = _sections(raw, {"STANCE", "REASONING", "ALT_QUESTION"})
    if "STANCE" not in sections:
        raise ParseError("no STANCE marker", raw)
    words = re.findall(r"[A-Za-z]+", sections["STANCE"])
    token = words[0].upper() if words else ""
    if token not in ("AGREE", "DISAGREE"):
        raise ParseError(f"unrecognised stance {sections['STANCE']!r}", raw)
    stance = Stance.AGREE if token == "AGREE" else Stance.DISAGREE
    alt = None
    if "ALT_QUESTION" in sections:
        alt = _unquote(_first_line(sections["ALT_QUESTION"]))
        if alt.lower().rstrip(".") in _NO_ALTERNATIVE:
            alt = None
    if stance is Stance.AGREE and alt is not None:
        raise ParseError("agreeing follower offered an alternative question", raw)
    return FollowerFeedback(stance, sections.get("REASONING", ""), alt)


def _one_line(text: str) -> str:
    return " ".join(text.split())


def render_proposal(proposal: Proposal) -> str:
    """Marker-grammar text that ``parse_proposal`` maps back to ``proposal``."""
    verdict = "CLEAR" if proposal.is_clear else f"QUESTION: {_one_line(proposal.question or '')}"
    return f"REASONING: {_one_line(proposal.reasoning)}\nVERDICT: {verdict}"


def render_feedback(feedback: FollowerFeedback) -> str:
    alt = _one_line(feedback.alternative_question) if feedback.alternative_question else "NONE"
    return f"STANCE: {feedback.stance.value.upper()}\nREASONING: {_one_line(feedback.reasoning)}\nALT_QUESTION: {alt}"
