"""Success judgments and the aggregate metric report.

Configurations are ``Single(<model>)`` (baseline records) and
``Debate(<model>)`` (debates led by that model). Rates are percentages
over dataset entries, except the consensus statistics which are over
debates per leader.
"""

from __future__ import annotations

import csv
import io
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .agents import Proposal
from .dataset import AmbiguityType, InstructionEntry, plural
from .engine import BaselineRecord, DebateTranscript
from .errors import KeyMismatch

REPORT_SCHEMA_VERSION = 1
MODES = ("lenient", "strict")
CATEGORY_ORDER = ("numerical", "attribute", "spatial")
FIGURE_FILES = {
    "overall": "fig2_overall.csv",
    "attribute": "fig3_attribute.csv",
    "numerical": "fig4_numerical.csv",
    "spatial": "fig5_spatial.csv",
}


@lru_cache(maxsize=None)
def default_term_table() -> dict[str, dict[str, list[str]]]:
    text = resources.files("ambidebate").joinpath("data/terms.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class SuccessJudgment:
    success: bool
    mode: str
    matched_slot_terms: tuple[str, ...] = ()


def slot_terms(entry: InstructionEntry, table: Mapping[str, Mapping[str, Sequence[str]]] | None = None) -> tuple[list[str], list[str]]:
    """``(target_terms, reference_terms)`` for an entry.

    A question counts as targeted (strict mode) when it contains a target
    term. Reference terms only name the objects involved; they are reported
    when matched but never decide success on their own.
    """
    table = table or default_term_table()
    row = table.get(entry.ambiguity_type.value, {})
    s = entry.slots
    targets = list(row.get("class_terms", ()))
    refs: list[str] = []
    vague, precise = entry.substituted_terms()
    kind = entry.ambiguity_type
    if kind is AmbiguityType.NUMERICAL:
        targets += [vague, precise]
        refs.append(f"{s.object_color} {plural(s.object_noun, s.quantity_count)}")
    elif kind is AmbiguityType.ATTRIBUTE_NOUN:
        targets += [vague, s.object_noun, plural(s.object_noun, 2)]
        refs.append(s.object_color)
    elif kind is AmbiguityType.ATTRIBUTE_COLOR:
        targets += [vague, s.object_color]
        refs.append(s.object_noun)
    else:
        targets += [precise, vague, f"{s.landmark_color} {s.landmark_noun}"]
    targets += list(row.get("family_terms", ()))
    return _dedupe(targets), [r for r in _dedupe(refs) if r not in targets]


def _dedupe(items: Iterable[str]) -> list[str]:
    seen: dict[str, None] = {}
    for item in items:
        if item and item.lower() not in seen:
            seen[item.lower()] = None
    return list(seen)


def _contains(text: str, term: str) -> bool:
    return re.search(rf"(?<![\w-]){re.escape(term)}(?![\w-])", text, re.IGNORECASE) is not None


def judge_success(
    final_proposal: Proposal | None,
    entry: InstructionEntry,
    mode: str = "strict",
    *,
    term_table: Mapping[str, Mapping[str, Sequence[str]]] | None = None,
) -> SuccessJudgment:
    """Lenient: any clarifying question succeeds. Strict: the question must hit a target term."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if final_proposal is None or final_proposal.question is None:
        return SuccessJudgment(False, mode)
    question = final_proposal.question
    targets, refs = slot_terms(entry, term_table)
    hit_targets = [t for t in targets if _contains(question, t)]
    matched = tuple(hit_targets + [r for r in refs if _contains(question, r)])
    success = True if mode == "lenient" else bool(hit_targets)
    return SuccessJudgment(success, mode, matched)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def pct(num: float, den: float) -> float:
    return 100.0 * num / den if den else 0.0


def fmt(value: float, digits: int = 1) -> str:
    """Round half-up to ``digits`` decimals and drop a trailing ``.0`` (85.0 -> "85", 1.8 -> "1.8")."""
    q = Decimal(repr(float(value))).quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP)
    text = f"{q:f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


@dataclass
class ConfigStats:
    name: str
    kind: str
    model: str
    entries: int = 0
    successes: int = 0
    type_entries: Counter = field(default_factory=Counter)
    type_successes: Counter = field(default_factory=Counter)

    @property
    def success_pct(self) -> float:
        return pct(self.successes, self.entries)

    def category_counts(self, category: str) -> tuple[int, int]:
        kinds = [t for t in AmbiguityType if t.category == category]
        return sum(self.type_successes[t.value] for t in kinds), sum(self.type_entries[t.value] for t in kinds)

    def category_pct(self, category: str) -> float:
        return pct(*self.category_counts(category))

    def to_dict(self) -> dict[str, Any]:
        by_type = {
            t.value: {
                "successes": self.type_successes[t.value],
                "entries": self.type_entries[t.value],
                "success_pct": pct(self.type_successes[t.value], self.type_entries[t.value]),
            }
            for t in AmbiguityType
        }
        by_category = {}
        for c in CATEGORY_ORDER:
            s, n = self.category_counts(c)
            by_category[c] = {"successes": s, "entries": n, "success_pct": pct(s, n)}
        return {
            "name": self.name,
            "kind": self.kind,
            "model": self.model,
            "successes": self.successes,
            "entries": self.entries,
            "success_pct": self.success_pct,
            "by_category": by_category,
            "by_type": by_type,
        }


@dataclass
class LeaderStats:
    model: str
    max_rounds: int
    debates: int = 0
    consensus: int = 0
    non_consensus: int = 0
    errors: int = 0
    histogram: Counter = field(default_factory=Counter)
    consensus_successes: int = 0
    repeated_proposals: int = 0
    total_wall_time: float = 0.0

    @property
    def rounds_sum(self) -> int:
        return sum(r * n for r, n in self.histogram.items())

    @property
    def consensus_reach_pct(self) -> float:
        return pct(self.consensus, self.debates)

    @property
    def non_consensus_pct(self) -> float:
        return pct(self.non_consensus, self.debates)

    @property
    def avg_rounds(self) -> float:
        return self.rounds_sum / self.consensus if self.consensus else 0.0

    @property
    def consensus_success_pct(self) -> float:
        return pct(self.consensus_successes, self.consensus)

    @property
    def avg_debate_time(self) -> float:
        return self.total_wall_time / self.debates if self.debates else 0.0

    def histogram_rows(self) -> list[tuple[int, int, float]]:
        return [(r, self.histogram[r], pct(self.histogram[r], self.consensus)) for r in range(1, self.max_rounds + 1)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "debates": self.debates,
            "consensus": self.consensus,
            "non_consensus": self.non_consensus,
            "errors": self.errors,
            "consensus_reach_pct": self.consensus_reach_pct,
            "non_consensus_pct": self.non_consensus_pct,
            "avg_rounds": self.avg_rounds,
            "consensus_successes": self.consensus_successes,
            "consensus_success_pct": self.consensus_success_pct,
            "rounds_histogram": {str(r): n for r, n, _ in self.histogram_rows()},
            "rounds_histogram_pct": {str(r): p for r, _, p in self.histogram_rows()},
            "repeated_proposals": self.repeated_proposals,
        }


@dataclass
class MetricsReport:
    mode: str
    nonconsensus_as_failure: bool
    n_entries: int
    entries_by_type: dict[str, int]
    configurations: list[ConfigStats]
    leaders: list[LeaderStats]
    baseline_latency: dict[str, float]

    def config(self, name: str) -> ConfigStats:
        for c in self.configurations:
            if c.name == name:
                return c
        raise KeyError(name)

    def leader(self, model: str) -> LeaderStats:
        for stats in self.leaders:
            if stats.model == model:
                return stats
        raise KeyError(model)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "mode": self.mode,
            "nonconsensus_as_failure": self.nonconsensus_as_failure,
            "n_entries": self.n_entries,
            "entries_by_type": self.entries_by_type,
            "configurations": [c.to_dict() for c in self.configurations],
            "leaders": [s.to_dict() for s in self.leaders],
            "timing": {
                "avg_debate_time_s": {s.model: s.avg_debate_time for s in self.leaders},
                "avg_baseline_latency_s": dict(self.baseline_latency),
            },
        }


def _roster_from(baselines: Sequence[BaselineRecord], transcripts: Sequence[DebateTranscript]) -> list[str]:
    seen: dict[str, None] = {}
    for b in baselines:
        seen.setdefault(b.model)
    for t in transcripts:
        seen.setdefault(t.leader_model)
    return list(seen)


def compute_report(
    baselines: Sequence[BaselineRecord],
    transcripts: Sequence[DebateTranscript],
    dataset: Sequence[InstructionEntry],
    mode: str = "strict",
    *,
    roster: Sequence[str] | None = None,
    max_rounds: int | None = None,
    nonconsensus_as_failure: bool = True,
    term_table: Mapping[str, Mapping[str, Sequence[str]]] | None = None,
) -> MetricsReport:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    entries = {e.id: e for e in dataset}
    for rec in baselines:
        if rec.entry_id not in entries:
            raise KeyMismatch(f"baseline references unknown entry {rec.entry_id!r}")
    for t in transcripts:
        if t.entry_id not in entries:
            raise KeyMismatch(f"transcript references unknown entry {t.entry_id!r}")
    roster = list(roster) if roster is not None else _roster_from(baselines, transcripts)
    if max_rounds is None:
        seen_rounds = [len(t.rounds) for t in transcripts]
        max_rounds = max([5, *seen_rounds])

    type_totals = Counter(e.ambiguity_type.value for e in dataset)

    def new_config(kind: str, model: str) -> ConfigStats:
        label = "Single" if kind == "single" else "Debate"
        return ConfigStats(f"{label}({model})", kind, model, len(dataset), 0, Counter(type_totals), Counter())

    singles = {m: new_config("single", m) for m in roster}
    debates = {m: new_config("debate", m) for m in roster}
    leaders = {m: LeaderStats(m, max_rounds) for m in roster}
    latency_sum: dict[str, float] = defaultdict(float)
    latency_n: Counter = Counter()

    def judge(proposal: Proposal | None, entry: InstructionEntry) -> bool:
        return judge_success(proposal, entry, mode, term_table=term_table).success

    for rec in baselines:
        if rec.model not in singles:
            continue
        entry = entries[rec.entry_id]
        latency_sum[rec.model] += rec.latency
        latency_n[rec.model] += 1
        if judge(rec.proposal, entry):
            singles[rec.model].successes += 1
            singles[rec.model].type_successes[entry.ambiguity_type.value] += 1

    for t in transcripts:
        if t.leader_model not in leaders:
            continue
        entry = entries[t.entry_id]
        stats = leaders[t.leader_model]
        stats.debates += 1
        stats.total_wall_time += t.wall_time
        stats.repeated_proposals += t.repeated_proposals
        kind = t.outcome.kind
        if kind == "consensus":
            stats.consensus += 1
            stats.histogram[t.outcome.at_round] += 1
        elif kind == "non_consensus":
            stats.non_consensus += 1
        else:
            stats.errors += 1
        if kind == "consensus":
            final = t.outcome.final
        elif kind == "non_consensus" and not nonconsensus_as_failure:
            final = t.outcome.final
        else:
            final = None
        ok = judge(final, entry)
        if ok:
            debates[t.leader_model].successes += 1
            debates[t.leader_model].type_successes[entry.ambiguity_type.value] += 1
            if kind == "consensus":
                stats.consensus_successes += 1

    return MetricsReport(
        mode=mode,
        nonconsensus_as_failure=nonconsensus_as_failure,
        n_entries=len(dataset),
        entries_by_type={t.value: type_totals[t.value] for t in AmbiguityType},
        configurations=[singles[m] for m in roster] + [debates[m] for m in roster],
        leaders=[leaders[m] for m in roster],
        baseline_latency={m: (latency_sum[m] / latency_n[m] if latency_n[m] else 0.0) for m in roster},
    )


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def render_csvs(report: MetricsReport) -> dict[str, str]:
    """File name -> CSV text for every figure and table."""
    out: dict[str, str] = {}
    header = ("configuration", "kind", "model", "successes", "entries", "success_pct")
    out[FIGURE_FILES["overall"]] = _csv(
        header, [(c.name, c.kind, c.model, c.successes, c.entries, fmt(c.success_pct)) for c in report.configurations]
    )
    for category in ("attribute", "numerical", "spatial"):
        rows = []
        for c in report.configurations:
            s, n = c.category_counts(category)
            rows.append((c.name, c.kind, c.model, s, n, fmt(pct(s, n))))
        out[FIGURE_FILES[category]] = _csv(header, rows)
    out["fig6_rounds_to_consensus.csv"] = _csv(
        ("leader", "round", "count", "pct_of_consensus"),
        [(s.model, r, n, fmt(p)) for s in report.leaders for r, n, p in s.histogram_rows()],
    )
    out["fig7_nonconsensus.csv"] = _csv(
        ("leader", "debates", "non_consensus", "non_consensus_pct"),
        [(s.model, s.debates, s.non_consensus, fmt(s.non_consensus_pct)) for s in report.leaders],
    )
    out["table1_leader_effectiveness.csv"] = _csv(
        ("leader", "consensus_reach_pct", "avg_rounds", "success_pct"),
        [(s.model, fmt(s.consensus_reach_pct), fmt(s.avg_rounds), fmt(s.consensus_success_pct)) for s in report.leaders],
    )
    out["table2_debate_time.csv"] = _csv(
        ("leader", "avg_debate_time_s"),
        [(s.model, fmt(s.avg_debate_time)) for s in report.leaders],
    )
    return out


def emit_reports(report: MetricsReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    files = render_csvs(report)
    files["report.json"] = json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8", newline="\n")
        written.append(path)
    return written


def format_tables(report: MetricsReport) -> str:
    """Plain-text leader-effectiveness and debate-time tables."""
    width = max([len("Leader"), *(len(s.model) for s in report.leaders)])
    lines = [
        f"{'Leader':<{width}}  Cons. Reach (%)  Avg. Rounds  Success (%)",
    ]
    for s in report.leaders:
        lines.append(
            f"{s.model:<{width}}  {fmt(s.consensus_reach_pct):>15}  {fmt(s.avg_rounds):>11}  {fmt(s.consensus_success_pct):>11}"
        )
    lines.append("")
    lines.append(f"{'Leader':<{width}}  Avg. Debate Time (s)")
    for s in report.leaders:
        lines.append(f"{s.model:<{width}}  {fmt(s.avg_debate_time):>20}")
    return "\n".join(lines)
