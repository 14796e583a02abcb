"""Governed knowledge tree: node storage, structural invariants, audit trail.

Every write goes through insert/update/move/deprecate, which validate the
full invariant set before touching any state, append one audit event, and
consume one global sequence number. Replaying the audit log from an empty
tree reproduces the tree exactly (node ids embed the sequence number, so
they regenerate deterministically).
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field

from .errors import (
    AmbiguousPath,
    CorruptTree,
    CycleError,
    FormatVersionError,
    MissingApplyConditions,
    ShapeGuardViolation,
    UnknownNode,
    UnknownParent,
    VerticalityViolation,
)

FORMAT_VERSION = 1

ACTIVE = "active"
DEPRECATED = "deprecated"

UPDATABLE_FIELDS = ("title", "knowledge_statement", "apply_conditions")


@dataclass(frozen=True)
class ShapeGuardConfig:
    """Edit-time caps that keep the tree navigable."""

    max_root_nodes: int = 216
    max_fanout: int = 144
    max_depth: int = 6

    def __post_init__(self):
        if min(self.max_root_nodes, self.max_fanout, self.max_depth) < 1:
            raise ValueError("all shape guard caps must be positive")


@dataclass
class KnowledgeNode:
    """One knowledge item: a concise statement plus its applicability predicate."""

    id: str
    level: int
    title: str
    knowledge_statement: str
    apply_conditions: str
    status: str = ACTIVE
    parent: str | None = None
    children: list[str] = field(default_factory=list)
    created_seq: int = 0

    @property
    def active(self) -> bool:
        return self.status == ACTIVE

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "title": self.title,
            "knowledge_statement": self.knowledge_statement,
            "apply_conditions": self.apply_conditions,
            "status": self.status,
            "parent": self.parent,
            "children": list(self.children),
            "created_seq": self.created_seq,
        }


@dataclass
class AuditEvent:
    """One applied operation, in canonical replayable form."""

    seq: int
    ts: float
    op_kind: str  # insert | update | move | deprecate
    payload: dict
    worker_id: str

    def to_doc(self) -> dict:
        return {
            "seq": self.seq,
            "ts": self.ts,
            "op_kind": self.op_kind,
            "payload": self.payload,
            "worker_id": self.worker_id,
        }


class KnowledgeTree:
    """The governed hierarchy. Single-writer; readers work on clones."""

    def __init__(self, guards: ShapeGuardConfig | None = None):
        self.guards = guards or ShapeGuardConfig()
        self.nodes: dict[str, KnowledgeNode] = {}
        self.roots: list[str] = []
        self.next_seq: int = 1
        self.audit: list[AuditEvent] = []

    # --- lookups ---

    def node(self, node_id: str) -> KnowledgeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"no node {node_id!r}") from None

    def has_active(self, node_id: str) -> bool:
        node = self.nodes.get(node_id)
        return node is not None and node.active

    def active_children(self, node_id: str) -> list[KnowledgeNode]:
        return [self.nodes[c] for c in self.node(node_id).children if self.nodes[c].active]

    def subtree_ids(self, node_id: str) -> list[str]:
        """Preorder ids of the subtree rooted at node_id (any status)."""
        self.node(node_id)
        out: list[str] = []
        stack = [node_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return out

    def resolve_path(self, path: str) -> str:
        """Resolve a title-chain ('A/B/C') against active nodes only."""
        titles = path.split("/")
        candidates = [r for r in self.roots if self.has_active(r)]
        for depth, title in enumerate(titles):
            matched = [c for c in candidates if self.nodes[c].title == title]
            if not matched:
                raise UnknownNode(f"path {path!r} matches no active node")
            if depth == len(titles) - 1:
                if len(matched) > 1:
                    raise AmbiguousPath(f"path {path!r} matches {len(matched)} active nodes")
                return matched[0]
            candidates = [
                c for m in matched for c in self.nodes[m].children if self.has_active(c)
            ]
        raise UnknownNode(f"path {path!r} matches no active node")

    def active_count(self) -> int:
        return sum(1 for n in self.nodes.values() if n.active)

    def deprecated_count(self) -> int:
        return len(self.nodes) - self.active_count()

    def level_counts(self) -> dict[int, int]:
        """Active node count per level; levels with zero active nodes are omitted."""
        counts: dict[int, int] = {}
        for node in self.nodes.values():
            if node.active:
                counts[node.level] = counts.get(node.level, 0) + 1
        return dict(sorted(counts.items()))

    def max_level(self) -> int:
        return max((n.level for n in self.nodes.values() if n.active), default=0)

    # --- write operations ---

    def insert(
        self,
        parent: str | None = None,
        *,
        title: str,
        knowledge_statement: str,
        apply_conditions: str,
        level: int | None = None,
        worker_id: str = "local",
    ) -> str:
        """Attach a new node; returns its id. Validates before mutating."""
        if not apply_conditions:
            raise MissingApplyConditions("insert requires nonempty apply_conditions")
        if parent is None:
            required_level = 1
        else:
            parent_node = self.nodes.get(parent)
            if parent_node is None or not parent_node.active:
                raise UnknownParent(f"parent {parent!r} is missing or deprecated")
            required_level = parent_node.level + 1
        if level is not None and level != required_level:
            raise VerticalityViolation(
                f"declared level {level} but this position requires level {required_level}"
            )
        if parent is None and len(self.roots) + 1 > self.guards.max_root_nodes:
            raise ShapeGuardViolation(
                f"root cap reached ({self.guards.max_root_nodes} root nodes)"
            )
        if parent is not None and len(self.nodes[parent].children) + 1 > self.guards.max_fanout:
            raise ShapeGuardViolation(
                f"fan-out cap reached at {parent} ({self.guards.max_fanout} children)"
            )
        if required_level > self.guards.max_depth:
            raise ShapeGuardViolation(f"depth cap exceeded (max level {self.guards.max_depth})")

        seq = self.next_seq
        node_id = f"n{seq}"
        node = KnowledgeNode(
            id=node_id,
            level=required_level,
            title=title,
            knowledge_statement=knowledge_statement,
            apply_conditions=apply_conditions,
            parent=parent,
            created_seq=seq,
        )
        self.nodes[node_id] = node
        if parent is None:
            self.roots.append(node_id)
        else:
            self.nodes[parent].children.append(node_id)
        self.next_seq = seq + 1
        self._record(
            seq,
            "insert",
            {
                "id": node_id,
                "parent": parent,
                "level": required_level,
                "title": title,
                "knowledge_statement": knowledge_statement,
                "apply_conditions": apply_conditions,
            },
            worker_id,
        )
        return node_id

    def update(self, node_id: str, updates: dict, worker_id: str = "local") -> None:
        """Replace title / knowledge_statement / apply_conditions fields."""
        node = self.node(node_id)
        bad = set(updates) - set(UPDATABLE_FIELDS)
        if bad:
            raise ValueError(f"update may not touch field(s) {sorted(bad)}")
        if "apply_conditions" in updates and not updates["apply_conditions"]:
            raise MissingApplyConditions("update may not blank apply_conditions")
        for key, value in updates.items():
            setattr(node, key, value)
        seq = self.next_seq
        self.next_seq = seq + 1
        self._record(seq, "update", {"id": node_id, "fields": dict(updates)}, worker_id)

    def move(self, node_id: str, new_parent: str, worker_id: str = "local") -> None:
        """Re-attach a subtree under new_parent, re-leveling it uniformly."""
        node = self.node(node_id)
        parent_node = self.node(new_parent)
        if not node.active or not parent_node.active:
            raise UnknownNode("move requires both nodes to be active")
        subtree = self.subtree_ids(node_id)
        if new_parent in subtree:
            raise CycleError(f"{new_parent} is {node_id} or one of its descendants")
        if node.parent != new_parent and len(parent_node.children) + 1 > self.guards.max_fanout:
            raise ShapeGuardViolation(
                f"fan-out cap reached at {new_parent} ({self.guards.max_fanout} children)"
            )
        new_level = parent_node.level + 1
        delta = new_level - node.level
        deepest = max(self.nodes[nid].level for nid in subtree) + delta
        if deepest > self.guards.max_depth:
            raise ShapeGuardViolation(
                f"re-leveled subtree would reach level {deepest} (max {self.guards.max_depth})"
            )

        if node.parent is None:
            self.roots.remove(node_id)
        else:
            self.nodes[node.parent].children.remove(node_id)
        node.parent = new_parent
        parent_node.children.append(node_id)
        for nid in subtree:
            self.nodes[nid].level += delta
        seq = self.next_seq
        self.next_seq = seq + 1
        self._record(seq, "move", {"id": node_id, "new_parent": new_parent}, worker_id)

    def deprecate(self, node_id: str, worker_id: str = "local") -> None:
        """Mark a node and all descendants deprecated. Idempotent."""
        self.node(node_id)
        for nid in self.subtree_ids(node_id):
            self.nodes[nid].status = DEPRECATED
        seq = self.next_seq
        self.next_seq = seq + 1
        self._record(seq, "deprecate", {"id": node_id}, worker_id)

    def _record(self, seq: int, op_kind: str, payload: dict, worker_id: str) -> None:
        self.audit.append(AuditEvent(seq, time.time(), op_kind, payload, worker_id))

    # --- audit replay ---

    def apply_event(self, event: AuditEvent) -> None:
        """Re-apply one audit payload; used for log replay."""
        payload = event.payload
        if event.op_kind == "insert":
            node_id = self.insert(
                payload["parent"],
                title=payload["title"],
                knowledge_statement=payload["knowledge_statement"],
                apply_conditions=payload["apply_conditions"],
                level=payload["level"],
                worker_id=event.worker_id,
            )
            if node_id != payload["id"]:
                raise CorruptTree(
                    f"replay produced id {node_id} where the log recorded {payload['id']}"
                )
        elif event.op_kind == "update":
            self.update(payload["id"], payload["fields"], worker_id=event.worker_id)
        elif event.op_kind == "move":
            self.move(payload["id"], payload["new_parent"], worker_id=event.worker_id)
        elif event.op_kind == "deprecate":
            self.deprecate(payload["id"], worker_id=event.worker_id)
        else:
            raise CorruptTree(f"unknown audit op_kind {event.op_kind!r}")

    @classmethod
    def replay_audit(
        cls, events: list[AuditEvent], guards: ShapeGuardConfig | None = None
    ) -> "KnowledgeTree":
        tree = cls(guards)
        for event in events:
            tree.apply_event(event)
        return tree

    # --- invariants, serialization ---

    def verify_invariants(self) -> None:
        """Raise CorruptTree on the first structural violation found."""
        g = self.guards
        if len(self.roots) > g.max_root_nodes:
            raise CorruptTree(f"{len(self.roots)} roots exceed cap {g.max_root_nodes}")
        if len(set(self.roots)) != len(self.roots):
            raise CorruptTree("duplicate root entries")
        for rid in self.roots:
            root = self.nodes.get(rid)
            if root is None:
                raise CorruptTree(f"root list references missing node {rid}")
            if root.parent is not None or root.level != 1:
                raise CorruptTree(f"root {rid} has a parent or non-1 level")
        visited: set[str] = set()
        for rid in self.roots:
            stack = [rid]
            while stack:
                nid = stack.pop()
                if nid in visited:
                    raise CorruptTree(f"node {nid} reachable more than once")
                visited.add(nid)
                node = self.nodes[nid]
                if node.id != nid:
                    raise CorruptTree(f"node keyed {nid} carries id {node.id}")
                if node.status not in (ACTIVE, DEPRECATED):
                    raise CorruptTree(f"node {nid} has invalid status {node.status!r}")
                if not node.apply_conditions:
                    raise CorruptTree(f"node {nid} has empty apply_conditions")
                if node.level > g.max_depth:
                    raise CorruptTree(f"node {nid} at level {node.level} exceeds depth cap")
                if not 0 < node.created_seq < self.next_seq:
                    raise CorruptTree(f"node {nid} has out-of-range created_seq")
                if node.id != f"n{node.created_seq}":
                    raise CorruptTree(f"node id {nid} does not match its created_seq")
                if len(node.children) > g.max_fanout:
                    raise CorruptTree(f"node {nid} fan-out {len(node.children)} exceeds cap")
                if len(set(node.children)) != len(node.children):
                    raise CorruptTree(f"node {nid} has duplicate children")
                for cid in node.children:
                    child = self.nodes.get(cid)
                    if child is None:
                        raise CorruptTree(f"node {nid} references missing child {cid}")
                    if child.parent != nid:
                        raise CorruptTree(f"child {cid} does not point back at {nid}")
                    if child.level != node.level + 1:
                        raise CorruptTree(f"child {cid} violates verticality under {nid}")
                    if child.active and not node.active:
                        raise CorruptTree(f"active node {cid} under deprecated parent {nid}")
                    stack.append(cid)
        if len(visited) != len(self.nodes):
            orphans = sorted(set(self.nodes) - visited)
            raise CorruptTree(f"nodes unreachable from any root: {orphans[:5]}")

    def to_doc(self) -> dict:
        nodes = sorted(self.nodes.values(), key=lambda n: n.created_seq)
        return {
            "format_version": FORMAT_VERSION,
            "guards": {
                "max_root_nodes": self.guards.max_root_nodes,
                "max_fanout": self.guards.max_fanout,
                "max_depth": self.guards.max_depth,
            },
            "next_seq": self.next_seq,
            "roots": list(self.roots),
            "nodes": [n.to_doc() for n in nodes],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "KnowledgeTree":
        if not isinstance(doc, dict) or "format_version" not in doc:
            raise CorruptTree("tree document is missing format_version")
        if doc["format_version"] != FORMAT_VERSION:
            raise FormatVersionError(f"unsupported tree format_version {doc['format_version']!r}")
        try:
            guards = ShapeGuardConfig(**doc["guards"])
            tree = cls(guards)
            tree.next_seq = doc["next_seq"]
            tree.roots = list(doc["roots"])
            for nd in doc["nodes"]:
                node = KnowledgeNode(
                    id=nd["id"],
                    level=nd["level"],
                    title=nd["title"],
                    knowledge_statement=nd["knowledge_statement"],
                    apply_conditions=nd["apply_conditions"],
                    status=nd["status"],
                    parent=nd["parent"],
                    children=list(nd["children"]),
                    created_seq=nd["created_seq"],
                )
                tree.nodes[node.id] = node
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptTree(f"malformed tree document: {exc}") from exc
        tree.verify_invariants()
        return tree

    def canonical_json(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    def tree_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def clone(self, with_audit: bool = True) -> "KnowledgeTree":
        """Independent copy. with_audit=False skips the audit history, which
        dry-run simulations and reader views never consult."""
        if with_audit:
            return copy.deepcopy(self)
        tree = KnowledgeTree(self.guards)
        tree.next_seq = self.next_seq
        tree.roots = list(self.roots)
        tree.nodes = {
            nid: KnowledgeNode(
                id=node.id,
                level=node.level,
                title=node.title,
                knowledge_statement=node.knowledge_statement,
                apply_conditions=node.apply_conditions,
                status=node.status,
                parent=node.parent,
                children=list(node.children),
                created_seq=node.created_seq,
            )
            for nid, node in self.nodes.items()
        }
        return tree
