"""Ambiguity detection through leader-follower LLM debates.

Generates controlled ambiguous-instruction datasets, runs single-agent
baselines and leader-follower debates over pluggable backends, and
computes success / consensus / timing metrics from the transcripts.
"""

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
    render_feedback,
    render_proposal,
)
from .backends import (
    BackendDescriptor,
    GenerationRecord,
    HttpBackend,
    ScriptedBackend,
    ScriptRule,
    StochasticBackend,
    StochasticPolicy,
    make_backend,
)
from .dataset import (
    AmbiguityType,
    InstructionEntry,
    ScenarioContext,
    SlotRecord,
    Vocabulary,
    generate_attribute,
    generate_dataset,
    generate_numerical,
    generate_spatial,
    read_dataset,
    write_dataset,
)
from .engine import (
    BaselineRecord,
    DebateConfig,
    DebateTranscript,
    RoundRecord,
    run_baseline,
    run_debate,
    run_experiment,
    run_rotation,
)
from .errors import (
    AmbidebateError,
    BackendError,
    HttpStatusError,
    KeyMismatch,
    NetworkError,
    ParseError,
    SchemaError,
    ScriptExhausted,
    VocabularyExhausted,
)
from .evaluation import MetricsReport, SuccessJudgment, compute_report, emit_reports, judge_success

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "AmbidebateError",
    "AmbiguityType",
    "BackendDescriptor",
    "BackendError",
    "BaselineRecord",
    "build_baseline_prompt",
    "build_follower_prompt",
    "build_leader_prompt",
    "compute_report",
    "DebateConfig",
    "DebateTranscript",
    "emit_reports",
    "FollowerFeedback",
    "generate_attribute",
    "generate_dataset",
    "generate_numerical",
    "generate_spatial",
    "GenerationRecord",
    "HttpBackend",
    "HttpStatusError",
    "InstructionEntry",
    "judge_success",
    "KeyMismatch",
    "make_backend",
    "MetricsReport",
    "NetworkError",
    "parse_feedback",
    "parse_proposal",
    "ParseError",
    "PromptBundle",
    "Proposal",
    "read_dataset",
    "render_feedback",
    "render_proposal",
    "RoundRecord",
    "run_baseline",
    "run_debate",
    "run_experiment",
    "run_rotation",
    "ScenarioContext",
    "SchemaError",
    "ScriptedBackend",
    "ScriptExhausted",
    "ScriptRule",
    "SlotRecord",
    "StochasticBackend",
    "StochasticPolicy",
    "SuccessJudgment",
    "Vocabulary",
    "VocabularyExhausted",
    "write_dataset",
    "__version__",
]
