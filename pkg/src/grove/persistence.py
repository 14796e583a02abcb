"""On-disk formats: versioned tree document, append-only audit log,
growth log, and the advisory lock that keeps commands from sharing a tree.

The tree file is a single JSON document written deterministically, so
save -> load -> save reproduces identical bytes. The audit log is JSON
Lines, one applied operation per line in seq order; replaying it from an
empty tree reproduces the tree file exactly.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path

from .errors import CorruptTree, IoError, TreeLocked
from .training import GrowthRecord
from .tree import AuditEvent, KnowledgeTree, ShapeGuardConfig


def save_tree(tree: KnowledgeTree, path: str | Path) -> None:
    path = Path(path)
    text = json.dumps(tree.to_doc(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write tree file {path}: {exc}") from exc


def load_tree(path: str | Path) -> KnowledgeTree:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read tree file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorruptTree(f"tree file {path} is not valid JSON: {exc}") from exc
    return KnowledgeTree.from_doc(doc)


def append_audit(events: list[AuditEvent], path: str | Path) -> None:
    try:
        with open(path, "a", encoding="utf-8") as handle:
            for event in events:
                handle.write(json.dumps(event.to_doc(), sort_keys=True, ensure_ascii=False))
                handle.write("\n")
    except OSError as exc:
        raise IoError(f"cannot append audit log {path}: {exc}") from exc


def load_audit(path: str | Path) -> list[AuditEvent]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read audit log {path}: {exc}") from exc
    events = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            events.append(
                AuditEvent(
                    seq=doc["seq"],
                    ts=doc["ts"],
                    op_kind=doc["op_kind"],
                    payload=doc["payload"],
                    worker_id=doc["worker_id"],
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptTree(f"audit log {path} line {number} is malformed: {exc}") from exc
    return events


def replay_audit(events: list[AuditEvent], guards: ShapeGuardConfig | None = None) -> KnowledgeTree:
    return KnowledgeTree.replay_audit(events, guards)


def save_growth(records: list[GrowthRecord], path: str | Path, append: bool = False) -> None:
    mode = "a" if append else "w"
    try:
        with open(path, mode, encoding="utf-8") as handle:
            for record in records:
                doc = {
                    "step": record.step,
                    "per_level": {str(k): v for k, v in record.per_level.items()},
                    "ts": record.ts,
                }
                handle.write(json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write growth log {path}: {exc}") from exc


def load_growth(path: str | Path) -> list[GrowthRecord]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read growth log {path}: {exc}") from exc
    records = []
    for line in lines:
        if not line.strip():
            continue
        doc = json.loads(line)
        records.append(
            GrowthRecord(
                step=doc["step"],
                per_level={int(k): v for k, v in doc["per_level"].items()},
                ts=doc["ts"],
            )
        )
    return records


def export_growth_table(records: list[GrowthRecord], path: str | Path) -> None:
    """Growth log as a tab-separated step-by-level table."""
    max_level = max((max(r.per_level, default=0) for r in records), default=0)
    levels = list(range(1, max_level + 1))
    lines = ["step\t" + "\t".join(f"L{lv}" for lv in levels)]
    for record in records:
        lines.append(
            str(record.step) + "\t" + "\t".join(str(record.per_level.get(lv, 0)) for lv in levels)
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write growth table {path}: {exc}") from exc


@contextmanager
def tree_file_lock(tree_path: str | Path):
    """Advisory per-tree lock file; concurrent commands on one tree are refused."""
    lock_path = Path(str(tree_path) + ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise TreeLocked(
            f"{lock_path} exists; another command holds this tree (remove it if stale)"
        ) from None
    except OSError as exc:
        raise IoError(f"cannot create lock file {lock_path}: {exc}") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(lock_path)
        except OSError:
            pass
