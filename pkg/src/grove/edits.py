"""Agent-proposed JSON edit scripts: parse, dry-run check, atomic apply.

Wire format: a top-level object ``{"ops": [...]}`` where each op carries
``"type"`` in {insert_node, update_node, move_node, deprecate_node}.
Node references are ``{"id": "..."}`` or ``{"path": "Title/Title"}``; an
id of the form ``"$k"`` is a script-local handle naming the node created
by op k of the same script, so later ops can build on earlier inserts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .errors import (
    AtomicAbort,
    GroveError,
    JsonSyntaxError,
    SchemaError,
    UnknownNode,
)
from .tree import UPDATABLE_FIELDS, KnowledgeTree

OP_TYPES = ("insert_node", "update_node", "move_node", "deprecate_node")


@dataclass(frozen=True)
class NodeRef:
    """Exactly one of id (or "$k" handle) / path."""

    id: str | None = None
    path: str | None = None

    def describe(self) -> str:
        return f"id {self.id!r}" if self.id is not None else f"path {self.path!r}"


@dataclass(frozen=True)
class InsertNode:
    parent_ref: NodeRef | None
    level: int
    title: str
    knowledge_statement: str
    apply_conditions: str


@dataclass(frozen=True)
class UpdateNode:
    ref: NodeRef
    field_updates: tuple[tuple[str, str], ...]

    def updates_dict(self) -> dict:
        return dict(self.field_updates)


@dataclass(frozen=True)
class MoveNode:
    ref: NodeRef
    new_parent_ref: NodeRef


@dataclass(frozen=True)
class DeprecateNode:
    ref: NodeRef


EditOp = InsertNode | UpdateNode | MoveNode | DeprecateNode


@dataclass(frozen=True)
class EditScript:
    ops: tuple[EditOp, ...]
    provenance: str = ""


@dataclass(frozen=True)
class CandidateItem:
    """A statement introduced or changed by the script, for per-item validation."""

    statement: str
    apply_conditions: str
    source_op_index: int
    title: str


@dataclass(frozen=True)
class OpCheck:
    op_index: int
    status: str  # "ok" | "error" | "skipped"
    error: GroveError | None = None

    @property
    def error_name(self) -> str | None:
        return type(self.error).__name__ if self.error is not None else None


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[OpCheck, ...]

    @property
    def ok(self) -> bool:
        return all(e.status == "ok" for e in self.entries)

    @property
    def first_error(self) -> OpCheck | None:
        for entry in self.entries:
            if entry.status == "error":
                return entry
        return None

    def to_text(self) -> str:
        lines = []
        for entry in self.entries:
            if entry.status == "ok":
                lines.append(f"op {entry.op_index}: ok")
            elif entry.status == "skipped":
                lines.append(f"op {entry.op_index}: skipped (earlier op failed)")
            else:
                lines.append(f"op {entry.op_index}: {entry.error_name}: {entry.error}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ApplyResult:
    """Successful atomic application: ids created and audit seqs consumed."""

    created_ids: tuple[str, ...]
    audit_seqs: tuple[int, ...]


def strip_fence(raw: str) -> str:
    """Remove at most one surrounding fenced code block."""
    text = raw.strip()
    if text.startswith("```") and text.endswith("```") and len(text) > 6:
        first_newline = text.find("\n")
        if first_newline != -1:
            return text[first_newline + 1 : -3].strip()
    return text


def _parse_ref(obj, where: str) -> NodeRef:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be an object with 'id' or 'path'")
    has_id = isinstance(obj.get("id"), str)
    has_path = isinstance(obj.get("path"), str)
    if has_id == has_path:
        raise SchemaError(f"{where} must carry exactly one of 'id' or 'path'")
    if has_id:
        ref_id = obj["id"]
        if ref_id.startswith("$") and not ref_id[1:].isdigit():
            raise SchemaError(f"{where} handle {ref_id!r} is not of the form $<op-index>")
        return NodeRef(id=ref_id)
    return NodeRef(path=obj["path"])


def _parse_insert(obj: dict, index: int) -> InsertNode:
    node = obj.get("node")
    if not isinstance(node, dict):
        raise SchemaError(f"op {index}: insert_node requires a 'node' object")
    level = node.get("level")
    if not isinstance(level, int) or isinstance(level, bool) or level < 1:
        raise SchemaError(f"op {index}: node.level must be a positive integer")
    for key in ("title", "knowledge_statement", "apply_conditions"):
        if not isinstance(node.get(key), str):
            raise SchemaError(f"op {index}: node.{key} must be a string")
    if not node["apply_conditions"]:
        raise SchemaError(f"op {index}: insert_node requires nonempty apply_conditions")
    parent_ref = None
    if obj.get("parent_ref") is not None:
        parent_ref = _parse_ref(obj["parent_ref"], f"op {index}: parent_ref")
    return InsertNode(
        parent_ref=parent_ref,
        level=level,
        title=node["title"],
        knowledge_statement=node["knowledge_statement"],
        apply_conditions=node["apply_conditions"],
    )


def _parse_update(obj: dict, index: int) -> UpdateNode:
    ref = _parse_ref(obj.get("ref"), f"op {index}: ref")
    updates = obj.get("field_updates")
    if not isinstance(updates, dict) or not updates:
        raise SchemaError(f"op {index}: update_node requires a nonempty field_updates object")
    for key, value in updates.items():
        if key not in UPDATABLE_FIELDS:
            raise SchemaError(f"op {index}: field_updates may not touch {key!r}")
        if not isinstance(value, str):
            raise SchemaError(f"op {index}: field_updates.{key} must be a string")
    return UpdateNode(ref=ref, field_updates=tuple(sorted(updates.items())))


def parse_script(raw_json: str, provenance: str = "") -> EditScript:
    """Parse one edit script; unknown fields are ignored, unknown ops are errors."""
    try:
        doc = json.loads(strip_fence(raw_json))
    except json.JSONDecodeError as exc:
        raise JsonSyntaxError(f"edit script is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("ops"), list):
        raise SchemaError("edit script must be an object with an 'ops' array")
    if not doc["ops"]:
        raise SchemaError("edit script must carry at least one op")

    ops: list[EditOp] = []
    for index, obj in enumerate(doc["ops"]):
        if not isinstance(obj, dict):
            raise SchemaError(f"op {index} must be an object")
        op_type = obj.get("type")
        if op_type not in OP_TYPES:
            raise SchemaError(f"op {index}: unknown op type {op_type!r}")
        if op_type == "insert_node":
            ops.append(_parse_insert(obj, index))
        elif op_type == "update_node":
            ops.append(_parse_update(obj, index))
        elif op_type == "move_node":
            ops.append(
                MoveNode(
                    ref=_parse_ref(obj.get("ref"), f"op {index}: ref"),
                    new_parent_ref=_parse_ref(obj.get("new_parent_ref"), f"op {index}: new_parent_ref"),
                )
            )
        else:
            ops.append(DeprecateNode(ref=_parse_ref(obj.get("ref"), f"op {index}: ref")))
    return EditScript(ops=tuple(ops), provenance=provenance)


def _ref_to_doc(ref: NodeRef) -> dict:
    return {"id": ref.id} if ref.id is not None else {"path": ref.path}


def op_to_doc(op: EditOp) -> dict:
    if isinstance(op, InsertNode):
        doc: dict = {
            "type": "insert_node",
            "node": {
                "level": op.level,
                "title": op.title,
                "knowledge_statement": op.knowledge_statement,
                "apply_conditions": op.apply_conditions,
            },
        }
        if op.parent_ref is not None:
            doc["parent_ref"] = _ref_to_doc(op.parent_ref)
        return doc
    if isinstance(op, UpdateNode):
        return {"type": "update_node", "ref": _ref_to_doc(op.ref), "field_updates": op.updates_dict()}
    if isinstance(op, MoveNode):
        return {
            "type": "move_node",
            "ref": _ref_to_doc(op.ref),
            "new_parent_ref": _ref_to_doc(op.new_parent_ref),
        }
    return {"type": "deprecate_node", "ref": _ref_to_doc(op.ref)}


def serialize_script(script: EditScript) -> str:
    """Canonical wire form; parse_script(serialize_script(s)) == s."""
    doc = {"ops": [op_to_doc(op) for op in script.ops]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _resolve(tree: KnowledgeTree, ref: NodeRef, handles: dict[int, str]) -> str:
    if ref.id is not None:
        if ref.id.startswith("$"):
            index = int(ref.id[1:])
            if index not in handles:
                raise UnknownNode(
                    f"handle {ref.id} does not name a node created earlier in this script"
                )
            return handles[index]
        if not tree.has_active(ref.id):
            raise UnknownNode(f"no active node with id {ref.id!r}")
        return ref.id
    return tree.resolve_path(ref.path)


def _apply_op(
    tree: KnowledgeTree, op: EditOp, index: int, handles: dict[int, str], worker_id: str
) -> None:
    if isinstance(op, InsertNode):
        parent = _resolve(tree, op.parent_ref, handles) if op.parent_ref is not None else None
        handles[index] = tree.insert(
            parent,
            title=op.title,
            knowledge_statement=op.knowledge_statement,
            apply_conditions=op.apply_conditions,
            level=op.level,
            worker_id=worker_id,
        )
    elif isinstance(op, UpdateNode):
        tree.update(_resolve(tree, op.ref, handles), op.updates_dict(), worker_id=worker_id)
    elif isinstance(op, MoveNode):
        tree.move(
            _resolve(tree, op.ref, handles),
            _resolve(tree, op.new_parent_ref, handles),
            worker_id=worker_id,
        )
    else:
        tree.deprecate(_resolve(tree, op.ref, handles), worker_id=worker_id)


def check_script(tree: KnowledgeTree, script: EditScript) -> ValidationReport:
    """Dry-run the ops in order against a copy; never mutates the tree."""
    sim = tree.clone(with_audit=False)
    handles: dict[int, str] = {}
    entries: list[OpCheck] = []
    failed = False
    for index, op in enumerate(script.ops):
        if failed:
            entries.append(OpCheck(index, "skipped"))
            continue
        try:
            _apply_op(sim, op, index, handles, worker_id="check")
            entries.append(OpCheck(index, "ok"))
        except GroveError as exc:
            entries.append(OpCheck(index, "error", exc))
            failed = True
    return ValidationReport(tuple(entries))


def apply_script(tree: KnowledgeTree, script: EditScript, worker_id: str) -> ApplyResult:
    """All-or-nothing application. The caller must hold the global write lock.

    The script is first checked against a copy; only an all-ok script
    touches the tree, so a failure leaves it bit-identical.
    """
    report = check_script(tree, script)
    if not report.ok:
        bad = report.first_error
        raise AtomicAbort(bad.op_index, bad.error)
    handles: dict[int, str] = {}
    audit_before = len(tree.audit)
    for index, op in enumerate(script.ops):
        _apply_op(tree, op, index, handles, worker_id=worker_id)
    created = tuple(handles[i] for i in sorted(handles))
    seqs = tuple(ev.seq for ev in tree.audit[audit_before:])
    return ApplyResult(created_ids=created, audit_seqs=seqs)


def extract_candidates(script: EditScript) -> list[CandidateItem]:
    """One candidate per insert, plus one per update that changes the statement.

    Structural ops (move/deprecate) and pure-metadata updates introduce no
    statement, so they are not individually validated.
    """
    items: list[CandidateItem] = []
    for index, op in enumerate(script.ops):
        if isinstance(op, InsertNode):
            items.append(
                CandidateItem(
                    statement=op.knowledge_statement,
                    apply_conditions=op.apply_conditions,
                    source_op_index=index,
                    title=op.title,
                )
            )
        elif isinstance(op, UpdateNode):
            updates = op.updates_dict()
            if "knowledge_statement" in updates:
                items.append(
                    CandidateItem(
                        statement=updates["knowledge_statement"],
                        apply_conditions=updates.get("apply_conditions", ""),
                        source_op_index=index,
                        title=updates.get("title", ""),
                    )
                )
    return items


def _op_handle_refs(op: EditOp) -> list[int]:
    refs: list[NodeRef] = []
    if isinstance(op, InsertNode):
        if op.parent_ref is not None:
            refs.append(op.parent_ref)
    elif isinstance(op, UpdateNode):
        refs.append(op.ref)
    elif isinstance(op, MoveNode):
        refs.extend([op.ref, op.new_parent_ref])
    else:
        refs.append(op.ref)
    return [int(r.id[1:]) for r in refs if r.id is not None and r.id.startswith("$")]


def _remap_ref(ref: NodeRef | None, index_map: dict[int, int]) -> NodeRef | None:
    if ref is None or ref.id is None or not ref.id.startswith("$"):
        return ref
    return NodeRef(id=f"${index_map[int(ref.id[1:])]}")


def _remap_op(op: EditOp, index_map: dict[int, int]) -> EditOp:
    if isinstance(op, InsertNode):
        return replace(op, parent_ref=_remap_ref(op.parent_ref, index_map))
    if isinstance(op, UpdateNode):
        return replace(op, ref=_remap_ref(op.ref, index_map))
    if isinstance(op, MoveNode):
        return replace(
            op,
            ref=_remap_ref(op.ref, index_map),
            new_parent_ref=_remap_ref(op.new_parent_ref, index_map),
        )
    return replace(op, ref=_remap_ref(op.ref, index_map))


def filter_script(script: EditScript, rejected_op_indexes: set[int]) -> EditScript | None:
    """Drop rejected ops plus anything referencing their script-local handles.

    Returns None when nothing survives. Handles in surviving ops are
    renumbered to the new op positions.
    """
    drop = set(rejected_op_indexes)
    changed = True
    while changed:
        changed = False
        for index, op in enumerate(script.ops):
            if index in drop:
                continue
            if any(h in drop for h in _op_handle_refs(op)):
                drop.add(index)
                changed = True
    keep = [i for i in range(len(script.ops)) if i not in drop]
    if not keep:
        return None
    index_map = {old: new for new, old in enumerate(keep)}
    new_ops = tuple(_remap_op(script.ops[i], index_map) for i in keep)
    return EditScript(ops=new_ops, provenance=script.provenance)
