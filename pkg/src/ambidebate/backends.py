"""Response generators behind one interface.

* ``HttpBackend`` talks to an OpenAI-compatible ``/chat/completions`` endpoint.
* ``ScriptedBackend`` replays queued responses keyed by entry, role and round.
* ``StochasticBackend`` samples marker-grammar responses from a seeded policy.

The engine only ever sees the returned text, so the three are
interchangeable.
"""

from __future__ import annotations

import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Protocol, Sequence

import httpx

from .agents import AgentConfig, FollowerFeedback, PromptBundle, Proposal, Role, Stance, render_feedback, render_proposal
from .dataset import AmbiguityType, InstructionEntry, plural
from .errors import BackendError, ConfigError, HttpStatusError, NetworkError, ScriptExhausted
from .rng import PortableRng

log = logging.getLogger(__name__)

DEFAULT_ROSTER = ("Llama3-8B-instruct", "Gemma2-9B-it", "Mistral-7B-instruct")
DEFAULT_TIMEOUT = 120.0


class BackendKind(str, Enum):
    HTTP = "http"
    SCRIPTED = "scripted"
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class BackendDescriptor:
    kind: BackendKind
    model_name: str
    endpoint: str | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.kind is BackendKind.HTTP and not self.endpoint:
            raise ConfigError(f"http backend for {self.model_name!r} needs an endpoint (or LLM_ENDPOINT)")


@dataclass(frozen=True)
class GenerationRecord:
    raw_text: str
    latency: float
    token_usage: dict[str, int] | None = None

    def __post_init__(self) -> None:
        if self.latency < 0:
            raise ValueError("latency must be non-negative")


@dataclass(frozen=True)
class HealthStatus:
    model_name: str
    healthy: bool
    detail: str = ""


class Backend(Protocol):
    model_name: str

    def generate(self, prompt: PromptBundle, config: AgentConfig) -> GenerationRecord: ...

    def probe(self) -> HealthStatus: ...


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


class HttpBackend:
    """Chat-completions client. Transport errors are retried with exponential backoff."""

    def __init__(
        self,
        model_name: str,
        endpoint: str,
        *,
        api_key: str | None = None,
        served_model: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_retries: int = 2,
        backoff: float = 0.5,
    ):
        self.model_name = model_name
        self.served_model = served_model or model_name
        base = endpoint.rstrip("/")
        if base.endswith("/chat/completions"):
            base = base[: -len("/chat/completions")]
        self.base_url = base
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers)

    def close(self) -> None:
        self._client.close()

    def request_body(self, prompt: PromptBundle, config: AgentConfig) -> dict[str, Any]:
        return {
            "model": self.served_model,
            "messages": prompt.messages(),
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }

    def generate(self, prompt: PromptBundle, config: AgentConfig) -> GenerationRecord:
        body = self.request_body(prompt, config)
        url = f"{self.base_url}/chat/completions"
        start = time.perf_counter()
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(url, json=body)
                break
            except httpx.TransportError as exc:
                last_exc = exc
                log.warning("%s: transport error on attempt %d: %s", self.model_name, attempt + 1, exc)
        else:
            raise NetworkError(f"{self.model_name}: {type(last_exc).__name__}: {last_exc}")
        if resp.status_code >= 400:
            raise HttpStatusError(resp.status_code, resp.text)
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{self.model_name}: malformed completion payload ({exc})") from exc
        if not isinstance(text, str):
            raise BackendError(f"{self.model_name}: completion content is not text")
        latency = time.perf_counter() - start
        usage = payload.get("usage") if isinstance(payload, dict) else None
        if isinstance(usage, dict):
            usage = {k: v for k, v in usage.items() if isinstance(v, int)}
        else:
            usage = None
        return GenerationRecord(text, latency, usage)

    def probe(self) -> HealthStatus:
        try:
            resp = self._client.get(f"{self.base_url}/models")
        except httpx.HTTPError as exc:
            return HealthStatus(self.model_name, False, f"{type(exc).__name__}: {exc}")
        if resp.status_code != 200:
            return HealthStatus(self.model_name, False, f"HTTP {resp.status_code}")
        return HealthStatus(self.model_name, True, "ok")


# ---------------------------------------------------------------------------
# Scripted
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScriptRule:
    """Queue of responses for prompts matching the given filters (``None`` matches anything).

    Each (debate, role, round) consumes the queue independently. With
    ``cycle`` the queue wraps around instead of running out.
    """

    responses: tuple[str, ...]
    entry_id: str | None = None
    role: Role | None = None
    round_index: int | None = None
    cycle: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "responses", tuple(self.responses))
        if self.role is not None:
            object.__setattr__(self, "role", Role(self.role))

    def matches(self, prompt: PromptBundle) -> bool:
        return (
            (self.entry_id is None or self.entry_id == prompt.entry_id)
            and (self.role is None or self.role is prompt.role)
            and (self.round_index is None or self.round_index == prompt.round_index)
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScriptRule":
        responses = data["responses"]
        if isinstance(responses, str):
            responses = [responses]
        return cls(
            tuple(responses),
            entry_id=data.get("entry_id"),
            role=data.get("role"),
            round_index=data.get("round_index"),
            cycle=bool(data.get("cycle", False)),
        )


class ScriptedBackend:
    def __init__(
        self,
        model_name: str,
        rules: Sequence[ScriptRule] = (),
        *,
        responder: Callable[[PromptBundle], str] | None = None,
        latency: float | None = None,
    ):
        self.model_name = model_name
        self.rules = list(rules)
        self.responder = responder
        self.latency = latency
        self._cursors: dict[tuple, int] = {}
        self._lock = threading.Lock()

    def _next(self, prompt: PromptBundle) -> str:
        for i, rule in enumerate(self.rules):
            if not rule.matches(prompt):
                continue
            key = (i, prompt.stream_key or prompt.entry_id, prompt.role, prompt.round_index)
            with self._lock:
                n = self._cursors.get(key, 0)
                self._cursors[key] = n + 1
            if n < len(rule.responses):
                return rule.responses[n]
            if rule.cycle and rule.responses:
                return rule.responses[n % len(rule.responses)]
            raise ScriptExhausted(
                f"{self.model_name}: script for {prompt.entry_id}/{prompt.role.value}/round {prompt.round_index} exhausted"
            )
        if self.responder is not None:
            return self.responder(prompt)
        raise ScriptExhausted(f"{self.model_name}: no script for {prompt.entry_id}/{prompt.role.value}/round {prompt.round_index}")

    def generate(self, prompt: PromptBundle, config: AgentConfig) -> GenerationRecord:
        start = time.perf_counter()
        text = self._next(prompt)
        latency = self.latency if self.latency is not None else time.perf_counter() - start
        return GenerationRecord(text, latency)

    def probe(self) -> HealthStatus:
        return HealthStatus(self.model_name, True, "scripted")


# ---------------------------------------------------------------------------
# Stochastic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StochasticPolicy:
    """Per-call probabilities driving ``StochasticBackend``.

    ``detect_prob`` maps model name -> ambiguity type (or category, e.g.
    ``attribute``) -> probability of proposing a question. ``"*"`` is a
    wildcard at either level; ``default_detect_prob`` is the last resort.
    """

    detect_prob: dict[str, dict[str, float]] = field(default_factory=dict)
    agree_prob_given_question: float = 0.7
    agree_prob_given_clear: float = 0.7
    rng_seed: int = 0
    default_detect_prob: float = 0.5
    malformed_prob: float = 0.0
    latency_mean: float | None = None

    def __post_init__(self) -> None:
        probs = [self.agree_prob_given_question, self.agree_prob_given_clear, self.default_detect_prob, self.malformed_prob]
        probs += [p for table in self.detect_prob.values() for p in table.values()]
        if not all(0.0 <= p <= 1.0 for p in probs):
            raise ValueError("policy probabilities must lie in [0, 1]")
        if self.latency_mean is not None and self.latency_mean < 0:
            raise ValueError("latency_mean must be non-negative")

    def detect_probability(self, model_name: str, kind: AmbiguityType) -> float:
        for model_key in (model_name, "*"):
            table = self.detect_prob.get(model_key)
            if not table:
                continue
            for type_key in (kind.value, kind.category, "*"):
                if type_key in table:
                    return table[type_key]
        return self.default_detect_prob

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StochasticPolicy":
        known = {
            "detect_prob",
            "agree_prob_given_question",
            "agree_prob_given_clear",
            "rng_seed",
            "default_detect_prob",
            "malformed_prob",
            "latency_mean",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown stochastic policy keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "detect_prob" in kwargs:
            kwargs["detect_prob"] = {m: dict(t) for m, t in kwargs["detect_prob"].items()}
        return cls(**kwargs)


_QUESTIONS = {
    AmbiguityType.NUMERICAL: (
        "How many {color} blocks should I {action}?",
        "Exactly how many {color} blocks do you mean by '{vague}'?",
    ),
    AmbiguityType.ATTRIBUTE_NOUN: (
        "Which object do you mean by '{vague}': is it a {color} block?",
        "What kind of {color} {vague} should I {action}, a block or a bowl?",
    ),
    AmbiguityType.ATTRIBUTE_COLOR: (
        "Which color do you mean by '{vague}': is it the {color} block?",
        "What color is '{vague}' exactly, {palette}?",
    ),
    AmbiguityType.SPATIAL: (
        "Where exactly relative to the {lm_color} {lm_noun} should I {action} it?",
        "Do you mean {precise} the {lm_color} {lm_noun}, or somewhere else {vague} it?",
    ),
}


def clarifying_question(entry: InstructionEntry, variant: int = 0) -> str:
    """A slot-targeted clarifying question for ``entry`` (used by simulated agents)."""
    s = entry.slots
    vague, precise = entry.substituted_terms()
    templates = _QUESTIONS[entry.ambiguity_type]
    return templates[variant % len(templates)].format(
        color=s.object_color,
        action=s.action,
        vague=vague,
        precise=precise,
        lm_color=s.landmark_color,
        lm_noun=s.landmark_noun,
        palette=" or ".join(entry.context.block_inventory),
        noun=plural(s.object_noun, s.quantity_count),
    )


class StochasticBackend:
    """Seeded simulated agent.

    Every call draws from its own stream keyed by (seed, model, debate,
    role, round, attempt), so results do not depend on call interleaving.
    """

    def __init__(self, model_name: str, policy: StochasticPolicy):
        self.model_name = model_name
        self.policy = policy
        self._attempts: dict[tuple, int] = {}
        self._lock = threading.Lock()

    def _rng(self, prompt: PromptBundle) -> PortableRng:
        key = (prompt.stream_key or prompt.entry_id, prompt.role.value, prompt.round_index)
        with self._lock:
            attempt = self._attempts.get(key, 0)
            self._attempts[key] = attempt + 1
        return PortableRng(self.policy.rng_seed, self.model_name, *key, attempt)

    def _propose(self, entry: InstructionEntry, rng: PortableRng) -> str:
        p = self.policy.detect_probability(self.model_name, entry.ambiguity_type)
        if rng.bernoulli(p):
            vague, _ = entry.substituted_terms()
            proposal = Proposal(
                f"The phrase '{vague}' admits more than one execution in this scene. "
                "Acting on a guess could move the wrong objects or place them wrongly.",
                clarifying_question(entry, rng.below(2)),
            )
        else:
            proposal = Proposal("The command names the objects, their number and the target placement well enough to act on.")
        return render_proposal(proposal)

    def _evaluate(self, entry: InstructionEntry, leader: Proposal, rng: PortableRng) -> str:
        p = self.policy.agree_prob_given_clear if leader.is_clear else self.policy.agree_prob_given_question
        if rng.bernoulli(p):
            return render_feedback(FollowerFeedback(Stance.AGREE, "The proposal handles the command appropriately."))
        if leader.is_clear:
            vague, _ = entry.substituted_terms()
            fb = FollowerFeedback(
                Stance.DISAGREE,
                f"The term '{vague}' is underspecified here, so the command is not clear.",
                clarifying_question(entry, rng.below(2)),
            )
        else:
            fb = FollowerFeedback(
                Stance.DISAGREE,
                "The question does not pin down the ambiguous part precisely enough.",
                clarifying_question(entry, 1 if leader.question == clarifying_question(entry, 0) else 0),
            )
        return render_feedback(fb)

    def generate(self, prompt: PromptBundle, config: AgentConfig) -> GenerationRecord:
        start = time.perf_counter()
        entry = prompt.entry
        if entry is None:
            raise BackendError("stochastic backend needs the instruction entry attached to the prompt")
        rng = self._rng(prompt)
        if rng.bernoulli(self.policy.malformed_prob):
            text = "I am not sure what to say about this command."
        elif prompt.role is Role.FOLLOWER:
            if prompt.leader_proposal is None:
                raise BackendError("follower prompt without the leader proposal attached")
            text = self._evaluate(entry, prompt.leader_proposal, rng)
        else:
            text = self._propose(entry, rng)
        if self.policy.latency_mean is not None:
            # exponential draw by inversion keeps latency on the same portable stream
            latency = -self.policy.latency_mean * math.log(1.0 - rng.uniform())
        else:
            latency = time.perf_counter() - start
        return GenerationRecord(text, latency)

    def probe(self) -> HealthStatus:
        return HealthStatus(self.model_name, True, "stochastic")


# ---------------------------------------------------------------------------
# Construction and module-level entry points
# ---------------------------------------------------------------------------


def make_backend(
    descriptor: BackendDescriptor,
    *,
    policy: StochasticPolicy | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> Backend:
    params = dict(descriptor.params)
    if descriptor.kind is BackendKind.HTTP:
        return HttpBackend(
            descriptor.model_name,
            descriptor.endpoint or "",
            api_key=params.pop("api_key", None) or os.environ.get("LLM_API_KEY"),
            served_model=params.pop("served_model", None),
            timeout=float(params.pop("timeout", timeout)),
            max_retries=int(params.pop("max_retries", 2)),
            backoff=float(params.pop("backoff", 0.5)),
        )
    if descriptor.kind is BackendKind.SCRIPTED:
        rules = [r if isinstance(r, ScriptRule) else ScriptRule.from_dict(r) for r in params.get("rules", [])]
        return ScriptedBackend(descriptor.model_name, rules, latency=params.get("latency"))
    if "policy" in params:
        policy = params["policy"] if isinstance(params["policy"], StochasticPolicy) else StochasticPolicy.from_dict(params["policy"])
    if policy is None:
        raise ConfigError(f"stochastic backend for {descriptor.model_name!r} needs a policy")
    return StochasticBackend(descriptor.model_name, policy)


def generate(backend: Backend | BackendDescriptor, prompt: PromptBundle, config: AgentConfig) -> GenerationRecord:
    if isinstance(backend, BackendDescriptor):
        backend = make_backend(backend)
    return backend.generate(prompt, config)


def probe(backend: Backend | BackendDescriptor) -> HealthStatus:
    if isinstance(backend, BackendDescriptor):
        backend = make_backend(backend)
    return backend.probe()
