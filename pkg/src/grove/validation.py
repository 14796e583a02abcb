"""Per-item knowledge validation: sample fixes with and without an injected
item, check them with a pluggable evaluator, and apply the non-degrading
acceptance rule (with_item pass@k >= baseline pass@k).

The default GoldenMatch evaluator compares candidates against the case's
golden fix after normalization, so the whole training loop runs without
any external tools; ExternalCommand adapts a real model checker.
"""

from __future__ import annotations

import re
import shlex
import subprocess
import tempfile
import uuid
from dataclasses import dataclass
from math import comb
from pathlib import Path

from .cases import DebugCase, render_case_context
from .edits import CandidateItem
from .errors import DomainError, FixParseError, ToolError
from .zoom import format_knowledge_item

FIX_INSTRUCTIONS = (
    "## task\n"
    "Propose a corrected version of the buggy RTL that makes every assertion pass.\n"
    "Respond with the complete fixed file in a single fenced code block."
)

_FENCED_BLOCK = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)
_BLOCK_COMMENT = re.compile(r"/\*.*?\*/", re.DOTALL)
_LINE_COMMENT = re.compile(r"//[^\n]*")


@dataclass(frozen=True)
class FixCandidate:
    """One sampled repair: the full patched file plus the raw model output."""

    patched_rtl: str
    raw_response: str


@dataclass(frozen=True)
class EvalOutcome:
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class PassAtK:
    n: int
    c: int
    k: int
    value: float

    @classmethod
    def from_counts(cls, n: int, c: int, k: int) -> "PassAtK":
        return cls(n=n, c=c, k=k, value=pass_at_k(n, c, k))


@dataclass(frozen=True)
class ValidationVerdict:
    item: CandidateItem
    baseline: PassAtK
    with_item: PassAtK
    accepted: bool


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator 1 - C(n-c, k) / C(n, k).

    Computed as an exact integer ratio so results match subset enumeration
    bit for bit; Python's bignum comb never overflows.
    """
    if not 0 <= c <= n:
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    total = comb(n, k)
    return (total - comb(n - c, k)) / total


def extract_fix(raw_response: str) -> str:
    """The last fenced code block is the full patched file."""
    blocks = _FENCED_BLOCK.findall(raw_response)
    if not blocks or not blocks[-1].strip():
        raise FixParseError("response carries no non-empty fenced code block")
    return blocks[-1].strip("\n")


def build_fix_prompt(case: DebugCase, knowledge_block: str) -> str:
    """Case context plus optional knowledge; an empty block is exactly the
    zero-shot baseline prompt."""
    parts = [render_case_context(case, include_golden=False)]
    if knowledge_block:
        parts.append("## relevant debugging knowledge\n" + knowledge_block)
    parts.append(FIX_INSTRUCTIONS)
    return "\n\n".join(parts)


def generate_fixes(
    case: DebugCase, knowledge_block: str, agent, n: int
) -> list[FixCandidate | None]:
    """n independent samples; unparseable responses become None (they count
    as failing samples downstream, never abort the run)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prompt = build_fix_prompt(case, knowledge_block)
    samples: list[FixCandidate | None] = []
    for _ in range(n):
        raw = agent.complete(prompt)
        try:
            samples.append(FixCandidate(patched_rtl=extract_fix(raw), raw_response=raw))
        except FixParseError:
            samples.append(None)
    return samples


def normalize_rtl(text: str) -> str:
    """Strip comments, collapse whitespace. Comparison form for GoldenMatch."""
    text = _BLOCK_COMMENT.sub(" ", text)
    text = _LINE_COMMENT.sub(" ", text)
    return " ".join(text.split())


def golden_match_check(case: DebugCase, candidate: FixCandidate) -> bool:
    """Pass iff the normalized candidate contains every fixed line and none
    of the buggy lines from the golden fix."""
    if case.golden_fix is None:
        raise ValueError(f"case {case.case_id} has no golden fix")
    normalized = normalize_rtl(candidate.patched_rtl)
    for _, text in case.golden_fix.fixed_lines:
        if normalize_rtl(text) not in normalized:
            return False
    for _, text in case.golden_fix.buggy_lines:
        if normalize_rtl(text) in normalized:
            return False
    return True


class GoldenMatch:
    """Tool-free evaluator built on the golden fix."""

    def check(self, case: DebugCase, candidate: FixCandidate) -> EvalOutcome:
        if golden_match_check(case, candidate):
            return EvalOutcome(True)
        return EvalOutcome(False, "candidate does not match the golden fix")


@dataclass(frozen=True)
class ExternalCommandConfig:
    """Command template with {rtl_file} {assertion_file} {workdir} placeholders.

    Exit status 0 is a pass, anything else a fail; a timeout is recorded
    as a failing sample."""

    command_template: str
    timeout: float = 300.0
    workdir_root: str | None = None


def external_command_check(
    config: ExternalCommandConfig, case: DebugCase, candidate: FixCandidate
) -> EvalOutcome:
    root = Path(config.workdir_root) if config.workdir_root else Path(tempfile.gettempdir())
    workdir = root / f"grove-eval-{case.case_id}-{uuid.uuid4().hex[:8]}"
    workdir.mkdir(parents=True, exist_ok=True)
    rtl_file = workdir / "candidate.v"
    assertion_file = workdir / "assertions.sv"
    rtl_file.write_text(candidate.patched_rtl, encoding="utf-8")
    assertion_file.write_text("\n".join(case.assertions) + "\n", encoding="utf-8")
    command = config.command_template.format(
        rtl_file=rtl_file, assertion_file=assertion_file, workdir=workdir
    )
    try:
        proc = subprocess.run(
            shlex.split(command),
            capture_output=True,
            text=True,
            timeout=config.timeout,
            cwd=workdir,
        )
    except subprocess.TimeoutExpired:
        return EvalOutcome(False, f"timeout after {config.timeout}s")
    except OSError as exc:
        raise ToolError(f"cannot run evaluator command {command!r}: {exc}") from exc
    if proc.returncode == 0:
        return EvalOutcome(True)
    tail = (proc.stderr or proc.stdout or "").strip()[-200:]
    return EvalOutcome(False, f"exit {proc.returncode}: {tail}")


class ExternalCommand:
    """Evaluator adapter for any model checker reachable as a command."""

    def __init__(self, config: ExternalCommandConfig):
        self.config = config

    def check(self, case: DebugCase, candidate: FixCandidate) -> EvalOutcome:
        return external_command_check(self.config, case, candidate)


def measure_pass(
    case: DebugCase, knowledge_block: str, agent, evaluator, n: int, k: int
) -> PassAtK:
    """One full pass@k measurement: sample n fixes, count the passes."""
    samples = generate_fixes(case, knowledge_block, agent, n)
    c = 0
    for sample in samples:
        if sample is not None and evaluator.check(case, sample).passed:
            c += 1
    return PassAtK.from_counts(n, c, k)


def validate_item(
    case: DebugCase,
    item: CandidateItem,
    agent,
    evaluator,
    n: int,
    k: int,
    baseline: PassAtK | None = None,
) -> ValidationVerdict:
    """Non-degrading gate on the originating case.

    Both runs use identical n, k, and evaluator. A precomputed baseline may
    be passed in so one case's candidates share a single baseline run.
    """
    if case.golden_fix is None:
        raise ValueError(f"case {case.case_id} is not a training case")
    if baseline is None:
        baseline = measure_pass(case, "", agent, evaluator, n, k)
    block = format_knowledge_item(item.title, item.statement)
    with_item = measure_pass(case, block, agent, evaluator, n, k)
    return ValidationVerdict(
        item=item,
        baseline=baseline,
        with_item=with_item,
        accepted=with_item.value >= baseline.value,
    )
