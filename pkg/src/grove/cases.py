"""Debugging-case data model, the on-disk case format, and leakage-free splitting.

A case document is a single JSON object with top-level keys ``case_id``,
``module_name``, ``spec_text``, ``buggy_rtl``, ``assertions`` (array of
strings), ``failure_log``, and an optional ``golden_fix`` carrying
``buggy_lines`` / ``fixed_lines`` arrays of ``{line, text}`` objects.
A corpus is a directory of such files.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import EmptyCorpus, IoError, MalformedCase

REQUIRED_FIELDS = (
    "case_id",
    "module_name",
    "spec_text",
    "buggy_rtl",
    "assertions",
    "failure_log",
)


@dataclass(frozen=True)
class GoldenFix:
    """Known-correct patch: the buggy line(s) and the corresponding fix."""

    buggy_lines: tuple[tuple[int, str], ...]
    fixed_lines: tuple[tuple[int, str], ...]


@dataclass(frozen=True)
class DebugCase:
    """One assertion-failure case. RTL and assertion text are opaque to the engine."""

    case_id: str
    module_name: str
    spec_text: str
    buggy_rtl: str
    assertions: tuple[str, ...]
    failure_log: str
    golden_fix: GoldenFix | None = None

    @property
    def is_training(self) -> bool:
        return self.golden_fix is not None


@dataclass(frozen=True)
class DatasetSplit:
    """Module-disjoint train/test partition of a corpus."""

    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    ratio: float


def _require_str(doc: dict, key: str) -> str:
    value = doc.get(key)
    if not isinstance(value, str):
        raise MalformedCase(f"missing or non-string field {key!r}")
    return value


def _parse_lines(raw, key: str) -> tuple[tuple[int, str], ...]:
    if not isinstance(raw, list):
        raise MalformedCase(f"golden_fix.{key} must be an array")
    out = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise MalformedCase(f"golden_fix.{key} entries must be objects")
        line = entry.get("line")
        text = entry.get("text")
        if not isinstance(line, int) or isinstance(line, bool) or line < 1:
            raise MalformedCase(f"golden_fix.{key} line numbers must be 1-based integers")
        if not isinstance(text, str):
            raise MalformedCase(f"golden_fix.{key} entries must carry string text")
        out.append((line, text))
    return tuple(out)


def parse_case(raw: bytes | str) -> DebugCase:
    """Parse one case document. Raises MalformedCase on any schema problem."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedCase(f"case document is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedCase(f"case document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedCase("case document must be a JSON object")

    for key in REQUIRED_FIELDS:
        if key not in doc:
            raise MalformedCase(f"missing required field {key!r}")

    assertions = doc["assertions"]
    if not isinstance(assertions, list) or not all(isinstance(a, str) for a in assertions):
        raise MalformedCase("assertions must be an array of strings")

    case = DebugCase(
        case_id=_require_str(doc, "case_id"),
        module_name=_require_str(doc, "module_name"),
        spec_text=_require_str(doc, "spec_text"),
        buggy_rtl=_require_str(doc, "buggy_rtl"),
        assertions=tuple(assertions),
        failure_log=_require_str(doc, "failure_log"),
    )

    golden = doc.get("golden_fix")
    if golden is None:
        return case
    if not isinstance(golden, dict):
        raise MalformedCase("golden_fix must be an object")
    fix = GoldenFix(
        buggy_lines=_parse_lines(golden.get("buggy_lines", []), "buggy_lines"),
        fixed_lines=_parse_lines(golden.get("fixed_lines", []), "fixed_lines"),
    )
    n_rtl_lines = len(case.buggy_rtl.splitlines())
    for line, _ in fix.buggy_lines:
        if line > n_rtl_lines:
            raise MalformedCase(
                f"golden_fix.buggy_lines references line {line} but buggy_rtl has {n_rtl_lines} lines"
            )
    return replace(case, golden_fix=fix)


def case_to_doc(case: DebugCase) -> dict:
    """Inverse of parse_case, as a plain JSON-ready dict."""
    doc = {
        "case_id": case.case_id,
        "module_name": case.module_name,
        "spec_text": case.spec_text,
        "buggy_rtl": case.buggy_rtl,
        "assertions": list(case.assertions),
        "failure_log": case.failure_log,
    }
    if case.golden_fix is not None:
        doc["golden_fix"] = {
            "buggy_lines": [{"line": n, "text": t} for n, t in case.golden_fix.buggy_lines],
            "fixed_lines": [{"line": n, "text": t} for n, t in case.golden_fix.fixed_lines],
        }
    return doc


def load_case(path: str | Path) -> DebugCase:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read case file {path}: {exc}") from exc
    return parse_case(raw)


def save_case(case: DebugCase, path: str | Path) -> None:
    try:
        Path(path).write_text(
            json.dumps(case_to_doc(case), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoError(f"cannot write case file {path}: {exc}") from exc


def load_corpus(directory: str | Path) -> list[DebugCase]:
    """Load every ``*.json`` case in a directory, sorted by case_id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"case directory {directory} does not exist")
    cases = [load_case(p) for p in sorted(directory.glob("*.json"))]
    seen: set[str] = set()
    for case in cases:
        if case.case_id in seen:
            raise MalformedCase(f"duplicate case_id {case.case_id!r} in corpus")
        seen.add(case.case_id)
    return sorted(cases, key=lambda c: c.case_id)


def split_dataset(cases: list[DebugCase], ratio: float, seed: int) -> DatasetSplit:
    """Deterministic module-disjoint split.

    Cases are grouped by module_name, groups are shuffled with a seeded PRNG,
    and whole groups are assigned to train until the train case count first
    reaches ratio * total. No module ever appears in both partitions.
    """
    if not cases:
        raise EmptyCorpus("cannot split an empty case list")
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    groups: dict[str, list[str]] = {}
    for case in cases:
        if not case.module_name:
            raise MalformedCase(f"case {case.case_id!r} has empty module_name")
        groups.setdefault(case.module_name, []).append(case.case_id)

    module_names = sorted(groups)
    random.Random(seed).shuffle(module_names)

    target = ratio * len(cases)
    train: list[str] = []
    test: list[str] = []
    for name in module_names:
        if len(train) < target:
            train.extend(groups[name])
        else:
            test.extend(groups[name])
    return DatasetSplit(train=tuple(train), test=tuple(test), seed=seed, ratio=ratio)


def render_case_context(case: DebugCase, include_golden: bool = False) -> str:
    """Render the structured prompt context for one case.

    The golden fix is appended only for training-time reflection; test-time
    prompts never see it.
    """
    parts = [
        f"# case {case.case_id} (module {case.module_name})",
        "## specification\n" + case.spec_text,
        "## buggy rtl\n" + case.buggy_rtl,
        "## assertions\n" + "\n".join(f"- {a}" for a in case.assertions),
        "## failure log\n" + case.failure_log,
    ]
    if include_golden:
        if case.golden_fix is None:
            raise ValueError("case has no golden fix to render")
        lines = [f"buggy line {n}: {t}" for n, t in case.golden_fix.buggy_lines]
        lines += [f"fixed line {n}: {t}" for n, t in case.golden_fix.fixed_lines]
        parts.append("## golden fix\n" + "\n".join(lines))
    return "\n\n".join(parts)
