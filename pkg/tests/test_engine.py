from __future__ import annotations

import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambidebate.agents import FollowerFeedback, Proposal, Role, Stance
from ambidebate.backends import ScriptedBackend, ScriptRule, StochasticBackend, StochasticPolicy
from ambidebate.engine import (
    DebateConfig,
    DebateTranscript,
    JsonlSink,
    MemorySink,
    RoundRecord,
    read_baselines,
    read_transcripts,
    run_baseline,
    run_debate,
    run_experiment,
    run_rotation,
)
from ambidebate.errors import SchemaError

from conftest import AGREE, CLEAR, DISAGREE, QUESTION, ROSTER, scripted_roster

A, B, C = ROSTER


def q(text: str) -> str:
    return f"REASONING: Needs clarification.\nVERDICT: QUESTION: {text}"


# ---------------------------------------------------------------------------
# Config and records
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [{"follower_count": 3}, {"roster": (A, A, B)}, {"roster": (A, B)}, {"max_rounds": 0}],
)
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        DebateConfig(**kwargs)


def test_followers_in_roster_order(config):
    assert config.followers_of(A) == (B, C)
    assert config.followers_of(B) == (A, C)
    assert config.followers_of(C) == (A, B)
    with pytest.raises(ValueError):
        config.followers_of("other")


@pytest.mark.parametrize("s1,s2", list(itertools.product(list(Stance), repeat=2)))
def test_consensus_is_conjunction_of_agree(s1, s2):
    fb = [FollowerFeedback(s, "r") for s in (s1, s2)]
    rec = RoundRecord.of(1, Proposal("p"), fb)
    assert rec.consensus_after == (s1 is Stance.AGREE and s2 is Stance.AGREE)
    with pytest.raises(ValueError):
        RoundRecord(1, Proposal("p"), tuple(fb), not rec.consensus_after)


# ---------------------------------------------------------------------------
# Baseline
# ---------------------------------------------------------------------------


def test_baseline_clear(dataset60, config):
    rec = run_baseline(dataset60[0], A, scripted_roster(baseline_text=CLEAR), config)
    assert rec.proposal == Proposal("The command is precise.") and rec.error is None
    assert rec.latency >= 0


def test_baseline_question_verbatim(dataset60, config):
    rec = run_baseline(dataset60[0], A, scripted_roster(baseline_text=QUESTION), config)
    assert rec.proposal.question == "How many red blocks should I move?"


def test_baseline_garbage_twice_is_parse_error(dataset60, config):
    backends = {m: ScriptedBackend(m, [ScriptRule(("garbage", "garbage", CLEAR))]) for m in ROSTER}
    rec = run_baseline(dataset60[0], A, backends, config)
    assert rec.proposal is None
    assert rec.error["stage"]["kind"] == "parse"
    assert len(rec.calls) == 2


def test_baseline_recovers_after_one_regeneration(dataset60, config):
    backends = {m: ScriptedBackend(m, [ScriptRule(("garbage", CLEAR))]) for m in ROSTER}
    rec = run_baseline(dataset60[0], A, backends, config)
    assert rec.proposal is not None and len(rec.calls) == 2


def test_baseline_model_must_be_in_roster(dataset60, config):
    with pytest.raises(ValueError):
        run_baseline(dataset60[0], "other", scripted_roster(), config)


# ---------------------------------------------------------------------------
# Debate traces
# ---------------------------------------------------------------------------


def test_always_agree_consensus_round_one(dataset60, config):
    t = run_debate(dataset60[0], A, config, scripted_roster(follower_text=AGREE))
    assert t.outcome.kind == "consensus" and t.outcome.at_round == 1
    assert len(t.rounds) == 1
    assert t.outcome.final == t.rounds[0].leader_proposal
    assert t.follower_models == (B, C)


def test_always_disagree_non_consensus_five_rounds(dataset60, config):
    t = run_debate(dataset60[0], A, config, scripted_roster(follower_text=DISAGREE))
    assert t.outcome.kind == "non_consensus"
    assert len(t.rounds) == 5
    assert not any(r.consensus_after for r in t.rounds)
    assert t.outcome.final == t.rounds[-1].leader_proposal


def mixed_backends():
    leader_rules = [
        ScriptRule((q("How many red blocks?"),), role="leader", round_index=1),
        ScriptRule((q("Exactly how many red blocks should I move?"),), role="leader", round_index=2),
    ]
    return {
        A: ScriptedBackend(A, leader_rules),
        B: ScriptedBackend(B, [ScriptRule((AGREE,), role="follower", cycle=True)]),
        C: ScriptedBackend(
            C,
            [ScriptRule((DISAGREE,), role="follower", round_index=1), ScriptRule((AGREE,), role="follower", round_index=2)],
        ),
    }


def test_mixed_trace_consensus_round_two(dataset60, config):
    t = run_debate(dataset60[0], A, config, mixed_backends())
    assert [r.consensus_after for r in t.rounds] == [False, True]
    assert [fb.stance for fb in t.rounds[0].feedback] == [Stance.AGREE, Stance.DISAGREE]
    assert t.outcome.kind == "consensus" and t.outcome.at_round == 2
    assert t.outcome.final == t.rounds[1].leader_proposal
    assert t.outcome.final.question == "Exactly how many red blocks should I move?"


def test_feedback_propagates_to_next_leader_prompt(dataset60, config):
    t = run_debate(dataset60[0], A, config, scripted_roster(follower_text=DISAGREE))
    leader_calls = [c for c in t.calls if c.role == "leader"]
    assert [c.round_index for c in leader_calls] == [1, 2, 3, 4, 5]
    for k in range(2, 6):
        prompt = leader_calls[k - 1].prompt.user_text
        for fb in t.rounds[k - 2].feedback:
            assert fb.reasoning in prompt
            assert fb.alternative_question in prompt
    # followers are blind to each other: follower prompts never contain feedback text
    for c in t.calls:
        if c.role == "follower":
            assert "Exactly how many blocks?" not in c.prompt.user_text


def test_parse_failure_gets_one_regeneration_then_error(dataset60, config):
    backends = scripted_roster()
    backends[B] = ScriptedBackend(B, [ScriptRule(("garbage", "still garbage", AGREE), role="follower")])
    t = run_debate(dataset60[0], A, config, backends)
    assert t.outcome.kind == "error"
    assert t.outcome.stage == {"role": "follower", "model": B, "round_index": 1, "kind": "parse"}
    follower_b_calls = [c for c in t.calls if c.model == B]
    assert len(follower_b_calls) == 2
    assert t.rounds == ()


def test_backend_failure_is_error_outcome(dataset60, config):
    backends = scripted_roster()
    backends[A] = ScriptedBackend(A, [ScriptRule((QUESTION,), role="leader", round_index=1)])
    backends[B] = ScriptedBackend(B, [ScriptRule((DISAGREE,), role="follower", cycle=True)])
    t = run_debate(dataset60[0], A, config, backends)
    assert t.outcome.kind == "error"
    assert t.outcome.stage["role"] == "leader" and t.outcome.stage["round_index"] == 2
    assert t.outcome.stage["kind"] == "backend"
    assert "E_SCRIPT_EXHAUSTED" in t.outcome.cause
    assert len(t.rounds) == 1


def test_concurrent_followers_match_sequential(dataset60):
    pol = StochasticPolicy(rng_seed=5, agree_prob_given_question=0.4, agree_prob_given_clear=0.4)
    seq = DebateConfig(roster=ROSTER)
    par = DebateConfig(roster=ROSTER, concurrent_followers=True)
    for e in dataset60[:10]:
        a = run_debate(e, A, seq, {m: StochasticBackend(m, pol) for m in ROSTER})
        b = run_debate(e, A, par, {m: StochasticBackend(m, pol) for m in ROSTER})
        assert a.rounds == b.rounds and a.outcome == b.outcome


@settings(max_examples=60, deadline=None)
@given(
    stances=st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=8),
    max_rounds=st.integers(min_value=1, max_value=6),
)
def test_protocol_properties(dataset60, stances, max_rounds):
    """Safety, liveness and outcome shape for arbitrary follower stance sequences."""
    cfg = DebateConfig(roster=ROSTER, max_rounds=max_rounds)

    def follower(slot):
        def respond(prompt):
            agree = stances[min(prompt.round_index, len(stances)) - 1][slot]
            return AGREE if agree else DISAGREE

        return respond

    backends = {
        A: ScriptedBackend(A, [ScriptRule((QUESTION,), role="leader", cycle=True)]),
        B: ScriptedBackend(B, responder=follower(0)),
        C: ScriptedBackend(C, responder=follower(1)),
    }
    t = run_debate(dataset60[0], A, cfg, backends)
    padded = [stances[min(k, len(stances)) - 1] for k in range(1, max_rounds + 1)]
    first = next((k for k, (x, y) in enumerate(padded, 1) if x and y), None)
    assert 1 <= len(t.rounds) <= max_rounds
    if first is None:
        assert t.outcome.kind == "non_consensus" and len(t.rounds) == max_rounds
    else:
        assert t.outcome.kind == "consensus" and t.outcome.at_round == first == len(t.rounds)
        assert t.rounds[-1].consensus_after
    assert not any(r.consensus_after for r in t.rounds[:-1])


# ---------------------------------------------------------------------------
# Rotation and experiments
# ---------------------------------------------------------------------------


def test_rotation_each_model_leads_once(dataset60, config):
    ts = run_rotation(dataset60[0], config, scripted_roster())
    assert [t.leader_model for t in ts] == list(ROSTER)
    assert len({(t.entry_id, t.leader_model) for t in ts}) == 3


def test_rotation_isolates_failures(dataset60, config):
    class Exploding:
        model_name = A

        def generate(self, prompt, cfg):
            if prompt.role is Role.LEADER:
                raise RuntimeError("boom")
            return ScriptedBackend(A, [ScriptRule((AGREE,), cycle=True)]).generate(prompt, cfg)

        def probe(self):
            raise NotImplementedError

    backends = scripted_roster()
    backends[A] = Exploding()
    ts = run_rotation(dataset60[0], config, backends)
    assert [t.outcome.kind for t in ts] == ["error", "consensus", "consensus"]
    assert "boom" in ts[0].outcome.cause


def test_experiment_counts(dataset60, config):
    sink = MemorySink()
    summary = run_experiment(dataset60, config, scripted_roster(), sink)
    assert summary.transcripts == len(sink.transcripts) == 180
    assert summary.baselines == len(sink.baselines) == 180
    for m in ROSTER:
        assert sum(t.leader_model == m for t in sink.transcripts) == 60
    assert summary.outcomes["consensus"] == 180
    assert not summary.all_debates_failed


def test_experiment_rejects_empty_dataset(config):
    with pytest.raises(ValueError):
        run_experiment([], config, scripted_roster(), MemorySink())


def _strip_timing(path):
    out = []
    for line in path.read_text().splitlines():
        obj = json.loads(line)
        obj.pop("timing")
        out.append(obj)
    return out


def test_parallel_run_is_reproducible(dataset60, tmp_path):
    pol = StochasticPolicy(rng_seed=17, agree_prob_given_question=0.6, agree_prob_given_clear=0.3)
    outs = []
    for par in (1, 6):
        cfg = DebateConfig(roster=ROSTER, parallelism=par)
        with JsonlSink(tmp_path / f"p{par}") as sink:
            run_experiment(dataset60[:15], cfg, {m: StochasticBackend(m, pol) for m in ROSTER}, sink)
        outs.append((_strip_timing(tmp_path / f"p{par}" / "transcripts.jsonl"), _strip_timing(tmp_path / f"p{par}" / "baselines.jsonl")))
    assert outs[0] == outs[1]


def test_transcript_file_round_trip(dataset60, config, tmp_path):
    with JsonlSink(tmp_path) as sink:
        run_experiment(dataset60[:4], config, mixed_backends() | {B: ScriptedBackend(B, [ScriptRule((AGREE,), cycle=True)]), C: ScriptedBackend(C, [ScriptRule((AGREE,), cycle=True)])}, sink)
    ts = read_transcripts(tmp_path / "transcripts.jsonl")
    bs = read_baselines(tmp_path / "baselines.jsonl")
    assert len(ts) == 12 and len(bs) == 12
    again = [DebateTranscript.from_dict(json.loads(line)) for line in (tmp_path / "transcripts.jsonl").read_text().splitlines()]
    assert [t.to_dict() for t in again] == [json.loads(line) for line in (tmp_path / "transcripts.jsonl").read_text().splitlines()]
    first = json.loads((tmp_path / "transcripts.jsonl").read_text().splitlines()[0])
    assert set(first) >= {"entry_id", "leader_model", "follower_models", "rounds", "outcome", "timing", "calls"}
    assert first["calls"][0]["prompt"]["user"]


def test_corrupted_transcript_line(tmp_path, dataset60, config):
    with JsonlSink(tmp_path) as sink:
        run_experiment(dataset60[:2], config, scripted_roster(), sink)
    path = tmp_path / "transcripts.jsonl"
    lines = path.read_text().splitlines()
    lines[3] = lines[3][:40]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError) as exc:
        read_transcripts(path)
    assert exc.value.path == "transcripts.jsonl:4"
