"""Single-agent baseline and the leader-follower debate protocol.

A debate runs rounds of: leader proposes, both followers evaluate the
proposal independently, consensus iff both agree. Without consensus the
leader sees both followers' feedback and proposes again, up to
``max_rounds``. Backend failures, and parse failures that survive one
regeneration, end the debate with an error outcome.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence, TypeVar

from .agents import (
    AgentConfig,
    FollowerFeedback,
    PromptBundle,
    Proposal,
    build_baseline_prompt,
    build_follower_prompt,
    build_leader_prompt,
    parse_feedback,
    parse_proposal,
)
from .backends import DEFAULT_ROSTER, Backend
from .dataset import InstructionEntry
from .errors import ParseError, SchemaError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
T = TypeVar("T")


@dataclass(frozen=True)
class DebateConfig:
    roster: tuple[str, ...] = DEFAULT_ROSTER
    max_rounds: int = 5
    follower_count: int = 2
    parse_retries: int = 1
    parallelism: int = 1
    concurrent_followers: bool = False
    temperature: float = 0.5
    max_tokens: int = 350
    sentence_limit: int = 4
    templates: Mapping[str, str] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "roster", tuple(self.roster))
        if self.follower_count != 2:
            raise ValueError("the protocol uses exactly 2 followers")
        if len(self.roster) != 3 or len(set(self.roster)) != 3:
            raise ValueError("roster must name 3 distinct models")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.parse_retries < 0 or self.parallelism < 1:
            raise ValueError("parse_retries must be >= 0 and parallelism >= 1")

    def agent_config(self, model: str) -> AgentConfig:
        return AgentConfig(model, self.temperature, self.max_tokens, self.sentence_limit)

    def followers_of(self, leader: str) -> tuple[str, str]:
        if leader not in self.roster:
            raise ValueError(f"{leader!r} is not in the roster {self.roster}")
        a, b = (m for m in self.roster if m != leader)
        return a, b


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CallRecord:
    role: str
    model: str
    round_index: int
    attempt: int
    prompt: PromptBundle
    raw_text: str | None
    latency: float
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role,
            "model": self.model,
            "round_index": self.round_index,
            "attempt": self.attempt,
            "prompt": {"system": self.prompt.system_text, "user": self.prompt.user_text},
            "response": self.raw_text,
            "error": self.error,
        }


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    leader_proposal: Proposal
    feedback: tuple[FollowerFeedback, FollowerFeedback]
    consensus_after: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "feedback", tuple(self.feedback))
        if len(self.feedback) != 2:
            raise ValueError("a round holds feedback from exactly 2 followers")
        if self.consensus_after != all(fb.agrees for fb in self.feedback):
            raise ValueError("consensus_after must be the conjunction of both Agree stances")

    @classmethod
    def of(cls, round_index: int, proposal: Proposal, feedback: Sequence[FollowerFeedback]) -> "RoundRecord":
        return cls(round_index, proposal, tuple(feedback), all(fb.agrees for fb in feedback))

    def to_dict(self) -> dict[str, Any]:
        return {
            "round_index": self.round_index,
            "leader_proposal": self.leader_proposal.to_dict(),
            "feedback": [fb.to_dict() for fb in self.feedback],
            "consensus_after": self.consensus_after,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RoundRecord":
        return cls(
            data["round_index"],
            Proposal.from_dict(data["leader_proposal"]),
            tuple(FollowerFeedback.from_dict(fb) for fb in data["feedback"]),
            data["consensus_after"],
        )


@dataclass(frozen=True)
class Outcome:
    """``consensus`` (with ``final`` and ``at_round``), ``non_consensus`` or ``error``.

    For non-consensus ``final`` is the last leader proposal, kept so the
    alternative success reading can be computed without replaying rounds.
    """

    kind: str
    final: Proposal | None = None
    at_round: int | None = None
    stage: dict[str, Any] | None = None
    cause: str | None = None

    @classmethod
    def consensus(cls, final: Proposal, at_round: int) -> "Outcome":
        return cls("consensus", final, at_round)

    @classmethod
    def non_consensus(cls, final: Proposal) -> "Outcome":
        return cls("non_consensus", final)

    @classmethod
    def error(cls, stage: dict[str, Any], cause: str) -> "Outcome":
        return cls("error", stage=stage, cause=cause)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "final": self.final.to_dict() if self.final else None,
            "at_round": self.at_round,
            "stage": self.stage,
            "cause": self.cause,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Outcome":
        if data["kind"] not in ("consensus", "non_consensus", "error"):
            raise ValueError(f"unknown outcome kind {data['kind']!r}")
        final = Proposal.from_dict(data["final"]) if data.get("final") else None
        return cls(data["kind"], final, data.get("at_round"), data.get("stage"), data.get("cause"))


@dataclass(frozen=True)
class DebateTranscript:
    entry_id: str
    leader_model: str
    follower_models: tuple[str, str]
    rounds: tuple[RoundRecord, ...]
    outcome: Outcome
    wall_time: float
    per_call_latencies: tuple[float, ...] = ()
    calls: tuple[CallRecord, ...] = field(default=(), compare=False, repr=False)
    stored_calls: tuple[dict, ...] = field(default=(), compare=False, repr=False)

    @property
    def repeated_proposals(self) -> int:
        """Rounds whose leader proposal repeats the previous round's verbatim."""
        return sum(
            1 for a, b in zip(self.rounds, self.rounds[1:]) if a.leader_proposal == b.leader_proposal
        )

    def to_dict(self) -> dict[str, Any]:
        calls = [c.to_dict() for c in self.calls] if self.calls else list(self.stored_calls)
        return {
            "schema_version": SCHEMA_VERSION,
            "entry_id": self.entry_id,
            "leader_model": self.leader_model,
            "follower_models": list(self.follower_models),
            "rounds": [r.to_dict() for r in self.rounds],
            "outcome": self.outcome.to_dict(),
            "repeated_proposals": self.repeated_proposals,
            "calls": calls,
            "timing": {"wall_time": self.wall_time, "per_call_latencies": list(self.per_call_latencies)},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DebateTranscript":
        timing = data.get("timing", {})
        return cls(
            entry_id=data["entry_id"],
            leader_model=data["leader_model"],
            follower_models=tuple(data["follower_models"]),
            rounds=tuple(RoundRecord.from_dict(r) for r in data["rounds"]),
            outcome=Outcome.from_dict(data["outcome"]),
            wall_time=float(timing.get("wall_time", 0.0)),
            per_call_latencies=tuple(timing.get("per_call_latencies", ())),
            stored_calls=tuple(data.get("calls", ())),
        )


@dataclass(frozen=True)
class BaselineRecord:
    entry_id: str
    model: str
    proposal: Proposal | None
    latency: float
    error: dict[str, Any] | None = None
    calls: tuple[CallRecord, ...] = field(default=(), compare=False, repr=False)
    stored_calls: tuple[dict, ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        calls = [c.to_dict() for c in self.calls] if self.calls else list(self.stored_calls)
        return {
            "schema_version": SCHEMA_VERSION,
            "entry_id": self.entry_id,
            "model": self.model,
            "proposal": self.proposal.to_dict() if self.proposal else None,
            "error": self.error,
            "calls": calls,
            "timing": {"latency": self.latency},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BaselineRecord":
        return cls(
            entry_id=data["entry_id"],
            model=data["model"],
            proposal=Proposal.from_dict(data["proposal"]) if data.get("proposal") else None,
            latency=float(data.get("timing", {}).get("latency", 0.0)),
            error=data.get("error"),
            stored_calls=tuple(data.get("calls", ())),
        )


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------


class _Failure(Exception):
    def __init__(self, stage: dict[str, Any], cause: str):
        super().__init__(cause)
        self.stage = stage
        self.cause = cause


def _ask(
    backend: Backend,
    prompt: PromptBundle,
    agent: AgentConfig,
    parse: Callable[[str], T],
    retries: int,
    calls: list[CallRecord],
) -> T:
    stage = {"role": prompt.role.value, "model": agent.model_name, "round_index": prompt.round_index}
    last: ParseError | None = None
    for attempt in range(retries + 1):
        start = time.perf_counter()
        try:
            record = backend.generate(prompt, agent)
        except Exception as exc:  # any generation failure is terminal for the debate
            elapsed = time.perf_counter() - start
            cause = f"{getattr(exc, 'code', type(exc).__name__)}: {exc}"
            calls.append(CallRecord(prompt.role.value, agent.model_name, prompt.round_index, attempt, prompt, None, elapsed, cause))
            raise _Failure({**stage, "kind": "backend"}, cause) from exc
        try:
            parsed = parse(record.raw_text)
        except ParseError as exc:
            calls.append(
                CallRecord(prompt.role.value, agent.model_name, prompt.round_index, attempt, prompt, record.raw_text, record.latency, f"parse: {exc.reason}")
            )
            last = exc
            continue
        calls.append(CallRecord(prompt.role.value, agent.model_name, prompt.round_index, attempt, prompt, record.raw_text, record.latency))
        return parsed
    assert last is not None
    raise _Failure({**stage, "kind": "parse"}, f"E_PARSE: {last.reason}")


def _backend(backends: Mapping[str, Backend], model: str) -> Backend:
    try:
        return backends[model]
    except KeyError:
        raise _Failure({"role": "engine", "model": model, "round_index": 0, "kind": "config"}, f"no backend for {model!r}") from None


def run_baseline(
    entry: InstructionEntry,
    model: str,
    backends: Mapping[str, Backend],
    config: DebateConfig,
) -> BaselineRecord:
    if model not in config.roster:
        raise ValueError(f"{model!r} is not in the roster {config.roster}")
    agent = config.agent_config(model)
    prompt = dataclasses.replace(
        build_baseline_prompt(entry, agent, templates=config.templates), stream_key=f"{entry.id}|baseline"
    )
    calls: list[CallRecord] = []
    try:
        proposal = _ask(_backend(backends, model), prompt, agent, parse_proposal, config.parse_retries, calls)
        error = None
    except _Failure as failure:
        proposal, error = None, {"stage": failure.stage, "cause": failure.cause}
    latency = sum(c.latency for c in calls)
    return BaselineRecord(entry.id, model, proposal, latency, error, tuple(calls))


def _evaluate_followers(
    entry: InstructionEntry,
    proposal: Proposal,
    round_index: int,
    followers: Sequence[str],
    backends: Mapping[str, Backend],
    config: DebateConfig,
    stream: str,
    calls: list[CallRecord],
) -> list[FollowerFeedback]:
    def one(model: str, sink: list[CallRecord]) -> FollowerFeedback:
        agent = config.agent_config(model)
        prompt = build_follower_prompt(entry, agent, proposal, round_index=round_index, templates=config.templates)
        prompt = dataclasses.replace(prompt, stream_key=stream)
        return _ask(_backend(backends, model), prompt, agent, parse_feedback, config.parse_retries, sink)

    sinks: list[list[CallRecord]] = [[] for _ in followers]
    if config.concurrent_followers:
        with ThreadPoolExecutor(max_workers=len(followers)) as pool:
            futures = [pool.submit(one, m, s) for m, s in zip(followers, sinks)]
            results: list[FollowerFeedback | _Failure] = []
            for fut in futures:
                try:
                    results.append(fut.result())
                except _Failure as failure:
                    results.append(failure)
        for s in sinks:
            calls.extend(s)
        for r in results:
            if isinstance(r, _Failure):
                raise r
        return results  # type: ignore[return-value]
    feedback = []
    try:
        for model, sink in zip(followers, sinks):
            feedback.append(one(model, sink))
    finally:
        for s in sinks:
            calls.extend(s)
    return feedback


def run_debate(
    entry: InstructionEntry,
    leader_model: str,
    config: DebateConfig,
    backends: Mapping[str, Backend],
) -> DebateTranscript:
    followers = config.followers_of(leader_model)
    stream = f"{entry.id}|leader={leader_model}"
    agent = config.agent_config(leader_model)
    rounds: list[RoundRecord] = []
    calls: list[CallRecord] = []
    start = time.perf_counter()
    try:
        leader = _backend(backends, leader_model)
        outcome = None
        for k in range(1, config.max_rounds + 1):
            if k == 1:
                prompt = build_leader_prompt(entry, agent, templates=config.templates)
            else:
                prev = rounds[-1]
                prompt = build_leader_prompt(
                    entry,
                    agent,
                    prev.feedback,
                    previous_proposal=prev.leader_proposal,
                    round_index=k,
                    templates=config.templates,
                )
            prompt = dataclasses.replace(prompt, stream_key=stream)
            proposal = _ask(leader, prompt, agent, parse_proposal, config.parse_retries, calls)
            feedback = _evaluate_followers(entry, proposal, k, followers, backends, config, stream, calls)
            record = RoundRecord.of(k, proposal, feedback)
            rounds.append(record)
            if record.consensus_after:
                outcome = Outcome.consensus(proposal, k)
                break
        if outcome is None:
            outcome = Outcome.non_consensus(rounds[-1].leader_proposal)
    except _Failure as failure:
        outcome = Outcome.error(failure.stage, failure.cause)
    wall = time.perf_counter() - start
    return DebateTranscript(
        entry.id,
        leader_model,
        followers,
        tuple(rounds),
        outcome,
        wall,
        tuple(c.latency for c in calls),
        tuple(calls),
    )


def _crashed(entry: InstructionEntry, leader: str, config: DebateConfig, exc: Exception) -> DebateTranscript:
    followers = tuple(m for m in config.roster if m != leader)
    stage = {"role": "engine", "model": leader, "round_index": 0, "kind": "internal"}
    return DebateTranscript(entry.id, leader, followers, (), Outcome.error(stage, f"{type(exc).__name__}: {exc}"), 0.0)  # type: ignore[arg-type]


def run_rotation(
    entry: InstructionEntry,
    config: DebateConfig,
    backends: Mapping[str, Backend],
) -> list[DebateTranscript]:
    """One debate per roster model as leader, in roster order."""
    out = []
    for leader in config.roster:
        try:
            out.append(run_debate(entry, leader, config, backends))
        except Exception as exc:
            log.exception("debate %s led by %s crashed", entry.id, leader)
            out.append(_crashed(entry, leader, config, exc))
    return out


# ---------------------------------------------------------------------------
# Experiment runs
# ---------------------------------------------------------------------------


class JsonlSink:
    """Appends baseline and transcript records to two JSONL files, one flushed line per record."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.baselines_path = self.out_dir / "baselines.jsonl"
        self.transcripts_path = self.out_dir / "transcripts.jsonl"
        self._baselines = open(self.baselines_path, "w", encoding="utf-8", newline="\n")
        self._transcripts = open(self.transcripts_path, "w", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()

    def _append(self, fh, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False, sort_keys=False) + "\n"
        with self._lock:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def write_baseline(self, record: BaselineRecord) -> None:
        self._append(self._baselines, record.to_dict())

    def write_transcript(self, transcript: DebateTranscript) -> None:
        self._append(self._transcripts, transcript.to_dict())

    def close(self) -> None:
        with self._lock:
            self._baselines.close()
            self._transcripts.close()

    def __enter__(self) -> "JsonlSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class MemorySink:
    def __init__(self) -> None:
        self.baselines: list[BaselineRecord] = []
        self.transcripts: list[DebateTranscript] = []

    def write_baseline(self, record: BaselineRecord) -> None:
        self.baselines.append(record)

    def write_transcript(self, transcript: DebateTranscript) -> None:
        self.transcripts.append(transcript)


@dataclass
class RunSummary:
    entries: int = 0
    baselines: int = 0
    transcripts: int = 0
    baseline_errors: int = 0
    outcomes: Counter = field(default_factory=Counter)

    @property
    def all_debates_failed(self) -> bool:
        return self.transcripts > 0 and self.outcomes.get("error", 0) == self.transcripts

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": self.entries,
            "baselines": self.baselines,
            "baseline_errors": self.baseline_errors,
            "transcripts": self.transcripts,
            "outcomes": {k: self.outcomes.get(k, 0) for k in ("consensus", "non_consensus", "error")},
        }


def run_experiment(
    dataset: Sequence[InstructionEntry],
    config: DebateConfig,
    backends: Mapping[str, Backend],
    output_sink: JsonlSink | MemorySink,
    *,
    progress: Callable[[int, int], None] | None = None,
) -> RunSummary:
    """Every entry gets one baseline per model and one debate per leader.

    Work runs on up to ``config.parallelism`` threads; records reach the
    sink in dataset order regardless, so output files are reproducible.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    summary = RunSummary(entries=len(dataset))

    def debate(entry: InstructionEntry, leader: str) -> DebateTranscript:
        try:
            return run_debate(entry, leader, config, backends)
        except Exception as exc:
            log.exception("debate %s led by %s crashed", entry.id, leader)
            return _crashed(entry, leader, config, exc)

    def baseline(entry: InstructionEntry, model: str) -> BaselineRecord:
        try:
            return run_baseline(entry, model, backends, config)
        except Exception as exc:
            log.exception("baseline %s on %s crashed", entry.id, model)
            return BaselineRecord(entry.id, model, None, 0.0, {"stage": {"role": "engine"}, "cause": str(exc)})

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        jobs: list[tuple[Future, Future]] = []
        for entry in dataset:
            b = [pool.submit(baseline, entry, m) for m in config.roster]
            d = [pool.submit(debate, entry, m) for m in config.roster]
            jobs.append((b, d))  # type: ignore[arg-type]
        for i, (b_futs, d_futs) in enumerate(jobs, 1):
            for fut in b_futs:  # type: ignore[attr-defined]
                rec = fut.result()
                output_sink.write_baseline(rec)
                summary.baselines += 1
                summary.baseline_errors += rec.error is not None
            for fut in d_futs:  # type: ignore[attr-defined]
                t = fut.result()
                output_sink.write_transcript(t)
                summary.transcripts += 1
                summary.outcomes[t.outcome.kind] += 1
            if progress is not None:
                progress(i, len(dataset))
    return summary


# ---------------------------------------------------------------------------
# Reading run outputs
# ---------------------------------------------------------------------------


def _read_jsonl(path: str | Path, build: Callable[[dict], T]) -> list[T]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(build(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{Path(path).name}:{lineno}", f"unreadable record ({type(exc).__name__}: {exc})") from exc
    return out


def read_transcripts(path: str | Path) -> list[DebateTranscript]:
    return _read_jsonl(path, DebateTranscript.from_dict)


def read_baselines(path: str | Path) -> list[BaselineRecord]:
    return _read_jsonl(path, BaselineRecord.from_dict)
