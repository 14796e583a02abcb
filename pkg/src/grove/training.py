"""Gradient-free parallel learning: per-case reflection, per-item
validation, and governed atomic integration into a shared tree.

Workers validate concurrently (that is where the cost is), but commits
pass through a turnstile in case order, so a run over scripted inputs
produces a byte-identical tree regardless of worker count. Inside a
commit turn the script is re-checked against the live tree before
applying; a guard violation triggers a bounded re-proposal loop.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

from .agent import ask
from .cases import DebugCase, render_case_context
from .edits import (
    EditScript,
    apply_script,
    check_script,
    extract_candidates,
    filter_script,
    parse_script,
    serialize_script,
)
from .errors import CorruptTree, GroveError
from .render import TokenBudget
from .tree import KnowledgeTree
from .validation import PassAtK, measure_pass, validate_item
from .zoom import TRAINING_SCHEMA, run_edit_session

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    num_workers: int = 8
    budgets: TokenBudget = field(default_factory=TokenBudget)
    max_rounds: int = 10
    k: int = 1
    n: int | None = None  # samples per evaluation; defaults to max(k, 5)
    max_reproposals: int = 3
    include_conditions: bool = True

    def __post_init__(self):
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")

    @property
    def samples(self) -> int:
        return self.n if self.n is not None else max(self.k, 5)


@dataclass(frozen=True)
class GrowthRecord:
    """Per-level active node counts after one case completed."""

    step: int
    per_level: dict[int, int]
    ts: float


@dataclass
class CaseOutcome:
    case_id: str
    script_proposed: bool = False
    items_proposed: int = 0
    items_accepted: int = 0
    integrated: bool = False
    failure_reason: str | None = None
    eval_calls: int = 0


@dataclass
class TrainSummary:
    outcomes: list[CaseOutcome]
    growth: list[GrowthRecord]

    @property
    def integrated_count(self) -> int:
        return sum(1 for o in self.outcomes if o.integrated)

    @property
    def failure_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for outcome in self.outcomes:
            if outcome.failure_reason:
                counts[outcome.failure_reason] = counts.get(outcome.failure_reason, 0) + 1
        return dict(sorted(counts.items()))


class TreeStore:
    """Shared tree behind the single global write lock.

    Readers take deep-copied point-in-time views; the one writer checks
    and applies scripts while holding the lock, so no reader can ever
    observe a torn write.
    """

    def __init__(self, tree: KnowledgeTree | None = None):
        self.tree = tree or KnowledgeTree()
        self.lock = threading.RLock()
        self.growth: list[GrowthRecord] = []
        self._step = 0

    def view(self) -> KnowledgeTree:
        """Consistent point-in-time copy for readers (audit history omitted)."""
        with self.lock:
            return self.tree.clone(with_audit=False)

    def guard_counters(self) -> dict:
        with self.lock:
            guards = self.tree.guards
            fanouts = [len(n.children) for n in self.tree.nodes.values()]
            return {
                "roots": f"{len(self.tree.roots)}/{guards.max_root_nodes}",
                "max_fanout_used": f"{max(fanouts, default=0)}/{guards.max_fanout}",
                "max_level_used": f"{self.tree.max_level()}/{guards.max_depth}",
            }

    def integrate(self, script: EditScript, worker_id: str):
        """Check inside the lock, then apply; an all-ok check cannot fail to
        apply. Returns (report, result-or-None)."""
        with self.lock:
            report = check_script(self.tree, script)
            if not report.ok:
                return report, None
            result = apply_script(self.tree, script, worker_id)
            self.tree.verify_invariants()
            return report, result

    def finish_case(self) -> GrowthRecord:
        with self.lock:
            self._step += 1
            record = GrowthRecord(self._step, self.tree.level_counts(), time.time())
            self.growth.append(record)
            return record


class _TrainingAborted(Exception):
    """Raised in workers parked at the turnstile when another worker died."""


class _Turnstile:
    """Admits commit turns strictly in submission order."""

    def __init__(self):
        self._cond = threading.Condition()
        self._next = 0
        self._aborted = False

    def wait_for(self, order: int) -> None:
        with self._cond:
            self._cond.wait_for(lambda: self._aborted or self._next == order)
            if self._aborted:
                raise _TrainingAborted(f"turn {order} released by abort")

    def advance(self) -> None:
        with self._cond:
            self._next += 1
            self._cond.notify_all()

    def abort(self) -> None:
        with self._cond:
            self._aborted = True
            self._cond.notify_all()


class _CountingEvaluator:
    """Counts evaluator invocations for the per-case cost telemetry."""

    def __init__(self, inner):
        self._inner = inner
        self.calls = 0

    def check(self, case, candidate):
        self.calls += 1
        return self._inner.check(case, candidate)


def build_reproposal_prompt(
    case: DebugCase, script: EditScript, report, guard_counters: dict
) -> str:
    """Violation feedback for the agent: the rejected script, the exact
    per-op report, and the current guard headroom."""
    counters = "\n".join(f"- {key}: {value}" for key, value in guard_counters.items())
    return "\n\n".join(
        [
            render_case_context(case, include_golden=True),
            "## rejected edit script\n" + serialize_script(script),
            "## validation report\n" + report.to_text(),
            "## guard counters\n" + counters,
            "Propose a corrected edit script that satisfies the constraints "
            "(for example, pick a different parent).",
            "## response format\n" + TRAINING_SCHEMA,
        ]
    )


def process_case(
    case: DebugCase,
    store: TreeStore,
    agent,
    evaluator,
    config: TrainConfig,
    *,
    _turn: _Turnstile | None = None,
    _order: int = 0,
) -> CaseOutcome:
    """Reflection, per-item validation, filtered atomic integration.

    Per-case failures never raise; they come back as a CaseOutcome with a
    failure_reason. Only store corruption propagates.
    """
    outcome = CaseOutcome(case_id=case.case_id)
    counting = _CountingEvaluator(evaluator)
    n, k = config.samples, config.k
    worker_id = f"worker-{threading.current_thread().name}"

    baseline: PassAtK | None = None
    verdicts: dict[str, bool] = {}  # statement text -> accepted

    def validate_new(candidates) -> None:
        nonlocal baseline
        for item in candidates:
            if item.statement in verdicts:
                continue
            if baseline is None:
                baseline = measure_pass(case, "", agent, counting, n, k)
            verdict = validate_item(case, item, agent, counting, n, k, baseline=baseline)
            verdicts[item.statement] = verdict.accepted

    def filtered_or_none(script: EditScript) -> EditScript | None:
        candidates = extract_candidates(script)
        validate_new(candidates)
        rejected = {c.source_op_index for c in candidates if not verdicts[c.statement]}
        return filter_script(script, rejected)

    script: EditScript | None = None
    failure: str | None = None
    try:
        if case.golden_fix is None:
            failure = "missing golden fix"
        else:
            view = store.view()
            proposed = run_edit_session(
                case,
                view,
                agent,
                config.budgets,
                config.max_rounds,
                include_conditions=config.include_conditions,
            )
            outcome.script_proposed = True
            script = filtered_or_none(proposed)
            if script is None:
                failure = "all items rejected"
    except CorruptTree:
        raise
    except GroveError as exc:
        failure = f"{type(exc).__name__}: {exc}"

    if _turn is not None:
        _turn.wait_for(_order)
    try:
        if failure is None and script is not None:
            try:
                for attempt in range(config.max_reproposals + 1):
                    report, result = store.integrate(script, worker_id)
                    if result is not None:
                        outcome.integrated = True
                        break
                    if attempt == config.max_reproposals:
                        failure = (
                            f"guards still violated after {config.max_reproposals} re-proposals"
                        )
                        break
                    prompt = build_reproposal_prompt(case, script, report, store.guard_counters())
                    response = ask(agent, prompt, "training")
                    if response.edit_script_json is None:
                        failure = "re-proposal carried no edit script"
                        break
                    reproposed = parse_script(response.edit_script_json, provenance=case.case_id)
                    script = filtered_or_none(reproposed)
                    if script is None:
                        failure = "all items rejected"
                        break
            except CorruptTree:
                raise
            except GroveError as exc:
                failure = f"{type(exc).__name__}: {exc}"
        outcome.failure_reason = failure
        outcome.items_proposed = len(verdicts)
        outcome.items_accepted = sum(1 for accepted in verdicts.values() if accepted)
        outcome.eval_calls = counting.calls
        store.finish_case()
    finally:
        if _turn is not None:
            _turn.advance()
    return outcome


def _agent_for(agents, case: DebugCase):
    if hasattr(agents, "complete"):
        return agents
    return agents[case.case_id]


def train(cases, store: TreeStore, agents, evaluator, config: TrainConfig) -> TrainSummary:
    """Round-robin the cases over num_workers threads and run process_case.

    ``agents`` is either one shared agent or a mapping of case_id to agent
    (the shape scripted replays use). Commits serialize in case order.
    """
    cases = list(cases)
    for case in cases:
        if case.golden_fix is None:
            raise ValueError(f"case {case.case_id} is not a training case")
    turnstile = _Turnstile()
    results: list[CaseOutcome | None] = [None] * len(cases)
    errors: list[Exception] = []

    def worker(assignments) -> None:
        try:
            for order, case in assignments:
                results[order] = process_case(
                    case,
                    store,
                    _agent_for(agents, case),
                    evaluator,
                    config,
                    _turn=turnstile,
                    _order=order,
                )
        except Exception as exc:  # store corruption or programming error
            errors.append(exc)
            turnstile.abort()

    threads = []
    for w in range(config.num_workers):
        assignments = [(i, cases[i]) for i in range(w, len(cases), config.num_workers)]
        thread = threading.Thread(target=worker, args=(assignments,), name=f"w{w}")
        threads.append(thread)
        thread.start()
    for thread in threads:
        thread.join()
    if errors:
        root = next((e for e in errors if not isinstance(e, _TrainingAborted)), errors[0])
        raise root
    outcomes = [r for r in results if r is not None]
    summary = TrainSummary(outcomes=outcomes, growth=list(store.growth))
    logger.info(
        "trained %d cases: %d integrated, %d failed",
        len(outcomes), summary.integrated_count, len(outcomes) - summary.integrated_count,
    )
    return summary
