"""Run configuration file (YAML or JSON).

Example::

    dataset: data/ds.json
    out_dir: runs/demo
    seed: 7                  # required when any backend is stochastic
    mode: strict             # success judgment used by `report`
    max_rounds: 5
    parallelism: 4
    parse_retries: 1
    temperature: 0.5
    max_tokens: 350
    sentence_limit: 4
    http_timeout: 120
    templates_dir: null      # optional directory of prompt template overrides
    stochastic_policy:
      agree_prob_given_question: 0.7
      agree_prob_given_clear: 0.7
      detect_prob:
        Gemma2-9B-it: {"*": 0.8}
    roster:
      - {model: Llama3-8B-instruct, kind: stochastic}
      - {model: Gemma2-9B-it, kind: http, endpoint: http://localhost:8000/v1}
      - {model: Mistral-7B-instruct, kind: scripted, rules: [{responses: ["..."], cycle: true}]}
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .agents import load_templates
from .backends import DEFAULT_TIMEOUT, Backend, BackendDescriptor, BackendKind, StochasticPolicy, make_backend
from .engine import DebateConfig
from .errors import ConfigError

_KEYS = {
    "dataset",
    "out_dir",
    "seed",
    "mode",
    "max_rounds",
    "parallelism",
    "parse_retries",
    "temperature",
    "max_tokens",
    "sentence_limit",
    "http_timeout",
    "templates_dir",
    "stochastic_policy",
    "roster",
    "concurrent_followers",
}


@dataclass
class RunConfig:
    roster: list[BackendDescriptor]
    dataset: str | None = None
    out_dir: str | None = None
    seed: int | None = None
    mode: str = "strict"
    max_rounds: int = 5
    parallelism: int = 1
    parse_retries: int = 1
    temperature: float = 0.5
    max_tokens: int = 350
    sentence_limit: int = 4
    http_timeout: float = DEFAULT_TIMEOUT
    templates_dir: str | None = None
    concurrent_followers: bool = False
    stochastic_policy: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        names = [d.model_name for d in self.roster]
        if len(names) != 3 or len(set(names)) != 3:
            raise ConfigError(f"roster must list 3 distinct models, got {names}")
        if any(d.kind is BackendKind.STOCHASTIC for d in self.roster) and self.seed is None:
            raise ConfigError("seed is required when a stochastic backend is configured")
        if self.mode not in ("strict", "lenient"):
            raise ConfigError(f"mode must be strict or lenient, got {self.mode!r}")

    @property
    def model_names(self) -> tuple[str, ...]:
        return tuple(d.model_name for d in self.roster)

    def debate_config(self) -> DebateConfig:
        templates = load_templates(self.templates_dir) if self.templates_dir else None
        try:
            return DebateConfig(
                roster=self.model_names,
                max_rounds=self.max_rounds,
                parse_retries=self.parse_retries,
                parallelism=self.parallelism,
                concurrent_followers=self.concurrent_followers,
                temperature=self.temperature,
                max_tokens=self.max_tokens,
                sentence_limit=self.sentence_limit,
                templates=templates,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def policy(self) -> StochasticPolicy:
        data = dict(self.stochastic_policy)
        data["rng_seed"] = int(self.seed or 0)
        try:
            return StochasticPolicy.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"stochastic_policy: {exc}") from exc

    def build_backends(self) -> dict[str, Backend]:
        policy = self.policy() if any(d.kind is BackendKind.STOCHASTIC for d in self.roster) else None
        return {d.model_name: make_backend(d, policy=policy, timeout=self.http_timeout) for d in self.roster}

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with every non-None override applied (command-line flags win over the file)."""
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _descriptor(item: Any, index: int) -> BackendDescriptor:
    if not isinstance(item, Mapping):
        raise ConfigError(f"roster[{index}] must be a mapping")
    item = dict(item)
    try:
        model = item.pop("model")
        kind = BackendKind(item.pop("kind"))
    except KeyError as exc:
        raise ConfigError(f"roster[{index}] is missing {exc.args[0]!r}") from None
    except ValueError:
        raise ConfigError(f"roster[{index}].kind must be http, scripted or stochastic") from None
    endpoint = item.pop("endpoint", None)
    if kind is BackendKind.HTTP and not endpoint:
        endpoint = os.environ.get("LLM_ENDPOINT")
    return BackendDescriptor(kind, model, endpoint, item)


def parse_run_config(data: Mapping[str, Any]) -> RunConfig:
    unknown = set(data) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "roster" not in data:
        raise ConfigError("config needs a roster")
    kwargs = {k: v for k, v in data.items() if k != "roster"}
    kwargs["stochastic_policy"] = dict(kwargs.get("stochastic_policy") or {})
    cfg = RunConfig(roster=[_descriptor(item, i) for i, item in enumerate(data["roster"])], **kwargs)
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_run_config(data)
