"""Token-budgeted views of the tree: the global snapshot and zoom detail views.

Budgets are enforced against a deterministic, tokenizer-free estimator
(ceil of character count / 4). Inclusion is greedy over a fixed
consideration order and stops the first time the budget would be
exceeded, which makes the included set monotone in the budget. Character
cost is tracked incrementally, including the ellipsis marker lines that
appear under any included node whose children are not all shown.

Rendered line grammar (stable, asserted by tests):

    <indent>[<id>] L<level> <title> :: <summary> :: when: <apply_conditions>
    <indent>… (+<n> children)

where indent is two spaces per level below the root.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DeprecatedNode
from .tree import KnowledgeTree

ELLIPSIS = "…"
SUMMARY_CAP = 160


@dataclass(frozen=True)
class TokenBudget:
    """Snapshot and per-round chunk budgets, in estimator tokens."""

    snap_budget: int = 80000
    chunk_budget: int = 12000

    def __post_init__(self):
        if self.snap_budget < 1 or self.chunk_budget < 1:
            raise ValueError("budgets must be positive")
        if self.chunk_budget > self.snap_budget:
            raise ValueError("chunk_budget must not exceed snap_budget")


@dataclass(frozen=True)
class ReadOp:
    """One zoom action: expand a subtree or list a node's children."""

    kind: str  # "expand_node" | "list_children"
    target: str


@dataclass(frozen=True)
class Snapshot:
    """Budgeted level-order rendering of the whole tree."""

    text: str
    included: frozenset[str]
    elided: frozenset[str]
    token_count: int


@dataclass(frozen=True)
class DetailView:
    """One budgeted zoom view, tagged with the read op that produced it."""

    origin: ReadOp
    text: str
    token_count: int


def estimate_tokens(text: str) -> int:
    """Deterministic token estimate: ceiling(len(text) / 4)."""
    return (len(text) + 3) // 4


def _tokens_for_chars(chars: int) -> int:
    return (chars + 3) // 4


def _one_line(text: str) -> str:
    return " ".join(text.split())


def _first_sentence(text: str, cap: int = SUMMARY_CAP) -> str:
    flat = _one_line(text)
    dot = flat.find(".")
    if dot != -1:
        flat = flat[: dot + 1]
    return flat[:cap]


def _indent(level: int) -> str:
    return "  " * (level - 1)


def _marker(children_level: int, hidden: int) -> str:
    return f"{_indent(children_level)}{ELLIPSIS} (+{hidden} children)"


def _node_line(node, statement: str, conditions: str, include_conditions: bool) -> str:
    line = f"{_indent(node.level)}[{node.id}] L{node.level} {node.title} :: {statement}"
    if include_conditions:
        line += f" :: when: {conditions}"
    return line


class _Accountant:
    """Incremental character cost of a partially included view.

    Tracks, per included node, how many of its active children are still
    hidden; each such node owes one marker line whose length depends on
    the hidden count. A key of None stands for the virtual container of
    the top entries (forest roots, or the subtree target).
    """

    def __init__(self, base_chars: int):
        self.chars = base_chars
        self.hidden: dict[str | None, int] = {}
        self.marker_level: dict[str | None, int] = {}

    def open_slot(self, key: str | None, children_level: int, count: int,
                  charge: bool = True) -> None:
        """Register a hidden-children slot. charge=False when the marker cost
        was already carried by a delta_for/commit pair."""
        self.hidden[key] = count
        self.marker_level[key] = children_level
        if charge and count:
            self.chars += 1 + len(_marker(children_level, count))

    def delta_for(self, parent_key: str | None, line: str,
                  own_children_level: int, own_child_count: int) -> int:
        delta = 1 + len(line)
        if own_child_count:
            delta += 1 + len(_marker(own_children_level, own_child_count))
        old = self.hidden[parent_key]
        level = self.marker_level[parent_key]
        delta -= 1 + len(_marker(level, old))
        if old - 1 > 0:
            delta += 1 + len(_marker(level, old - 1))
        return delta

    def commit(self, parent_key: str | None, delta: int) -> None:
        self.chars += delta
        self.hidden[parent_key] -= 1


def render_snapshot(
    tree: KnowledgeTree, budget: TokenBudget, include_conditions: bool = True
) -> Snapshot:
    """Budgeted structural snapshot.

    Nodes are considered level by level, within a level by created_seq; a
    node is only eligible once its parent is included. Inclusion halts the
    first time adding a node (plus marker adjustments) would push the text
    over snap_budget.
    """
    header = f"knowledge tree snapshot ({tree.active_count()} active nodes)"
    by_level: dict[int, list] = {}
    for node in tree.nodes.values():
        if node.active:
            by_level.setdefault(node.level, []).append(node)
    for level in by_level:
        by_level[level].sort(key=lambda n: n.created_seq)
    active_roots = by_level.get(1, [])

    acct = _Accountant(len(header))
    acct.open_slot(None, 1, len(active_roots))
    if _tokens_for_chars(acct.chars) > budget.snap_budget:
        # Degenerate budget: fall back to the bare header, then to nothing.
        text = header if estimate_tokens(header) <= budget.snap_budget else ""
        return Snapshot(text, frozenset(), frozenset(), estimate_tokens(text))

    included: set[str] = set()
    lines: dict[str, str] = {}
    stopped = False
    for level in sorted(by_level):
        if stopped:
            break
        for node in by_level[level]:
            if node.parent is not None and node.parent not in included:
                continue
            line = _node_line(
                node,
                _first_sentence(node.knowledge_statement),
                _one_line(node.apply_conditions),
                include_conditions,
            )
            n_kids = len(tree.active_children(node.id))
            delta = acct.delta_for(node.parent, line, node.level + 1, n_kids)
            if _tokens_for_chars(acct.chars + delta) > budget.snap_budget:
                stopped = True
                break
            acct.commit(node.parent, delta)
            acct.open_slot(node.id, node.level + 1, n_kids, charge=False)
            included.add(node.id)
            lines[node.id] = line

    out = [header]

    def emit(node_id: str) -> None:
        out.append(lines[node_id])
        node = tree.nodes[node_id]
        kids = sorted(
            (c for c in node.children if c in included),
            key=lambda c: tree.nodes[c].created_seq,
        )
        for child in kids:
            emit(child)
        if acct.hidden[node_id] > 0:
            out.append(_marker(node.level + 1, acct.hidden[node_id]))

    for root in active_roots:
        if root.id in included:
            emit(root.id)
    if acct.hidden[None] > 0:
        out.append(_marker(1, acct.hidden[None]))

    text = "\n".join(out)
    assert len(text) == acct.chars, "snapshot accounting drifted from the rendered text"
    elided = frozenset(nid for nid in included if acct.hidden[nid] > 0)
    return Snapshot(text, frozenset(included), elided, estimate_tokens(text))


def render_subtree(
    tree: KnowledgeTree, node_id: str, budget_chunk: int, include_conditions: bool = True
) -> DetailView:
    """Depth-first detail view of one subtree with full statements."""
    target = tree.node(node_id)
    if not target.active:
        raise DeprecatedNode(f"node {node_id} is deprecated")
    header = f"subtree [{node_id}]"
    origin = ReadOp("expand_node", node_id)

    # Preorder over active descendants, children in created_seq order.
    order = []
    stack = [target]
    while stack:
        node = stack.pop()
        order.append(node)
        kids = sorted(tree.active_children(node.id), key=lambda n: n.created_seq)
        stack.extend(reversed(kids))

    acct = _Accountant(len(header))
    acct.open_slot(None, target.level, 1)
    included: set[str] = set()
    lines: dict[str, str] = {}
    for node in order:
        parent_key = None if node.id == node_id else node.parent
        line = _node_line(
            node,
            _one_line(node.knowledge_statement),
            _one_line(node.apply_conditions),
            include_conditions,
        )
        n_kids = len(tree.active_children(node.id))
        delta = acct.delta_for(parent_key, line, node.level + 1, n_kids)
        if _tokens_for_chars(acct.chars + delta) > budget_chunk:
            break
        acct.commit(parent_key, delta)
        acct.open_slot(node.id, node.level + 1, n_kids, charge=False)
        included.add(node.id)
        lines[node.id] = line

    if node_id not in included:
        # Not even the target line fits; degrade to the bare header.
        text = header if estimate_tokens(header) <= budget_chunk else ""
        return DetailView(origin, text, estimate_tokens(text))

    out = [header]

    def emit(nid: str) -> None:
        out.append(lines[nid])
        kids = sorted(
            (c for c in tree.nodes[nid].children if c in included),
            key=lambda c: tree.nodes[c].created_seq,
        )
        for child in kids:
            emit(child)
        if acct.hidden[nid] > 0:
            out.append(_marker(tree.nodes[nid].level + 1, acct.hidden[nid]))

    emit(node_id)
    text = "\n".join(out)
    assert len(text) == acct.chars, "subtree accounting drifted from the rendered text"
    return DetailView(origin, text, estimate_tokens(text))


def render_children(
    tree: KnowledgeTree, node_id: str, budget_chunk: int, include_conditions: bool = True
) -> DetailView:
    """One line per active child, in created_seq order, budget-truncated."""
    target = tree.node(node_id)
    if not target.active:
        raise DeprecatedNode(f"node {node_id} is deprecated")
    header = f"children of [{node_id}]"
    origin = ReadOp("list_children", node_id)

    kids = sorted(tree.active_children(node_id), key=lambda n: n.created_seq)
    if not kids:
        text = header + "\n(no children)"
        if estimate_tokens(text) > budget_chunk:
            text = header if estimate_tokens(header) <= budget_chunk else ""
        return DetailView(origin, text, estimate_tokens(text))

    acct = _Accountant(len(header))
    acct.open_slot(None, target.level + 1, len(kids))
    if _tokens_for_chars(acct.chars) > budget_chunk:
        text = header if estimate_tokens(header) <= budget_chunk else ""
        return DetailView(origin, text, estimate_tokens(text))

    shown: list[str] = []
    for child in kids:
        line = _node_line(
            child,
            _first_sentence(child.knowledge_statement),
            _first_sentence(child.apply_conditions),
            include_conditions,
        )
        delta = acct.delta_for(None, line, child.level + 1, 0)
        if _tokens_for_chars(acct.chars + delta) > budget_chunk:
            break
        acct.commit(None, delta)
        shown.append(line)

    out = [header] + shown
    if acct.hidden[None] > 0:
        out.append(_marker(target.level + 1, acct.hidden[None]))
    text = "\n".join(out)
    assert len(text) == acct.chars, "children accounting drifted from the rendered text"
    return DetailView(origin, text, estimate_tokens(text))


def render_inspect(tree: KnowledgeTree, node_id: str | None = None) -> str:
    """Unbudgeted human-oriented render; shows deprecated nodes with a marker."""
    out: list[str] = []

    def emit(nid: str) -> None:
        node = tree.nodes[nid]
        mark = " [deprecated]" if not node.active else ""
        pad = _indent(node.level)
        out.append(
            f"{pad}[{node.id}] L{node.level} {node.title}{mark}\n"
            f"{pad}  {_one_line(node.knowledge_statement)}\n"
            f"{pad}  when: {_one_line(node.apply_conditions)}"
        )
        for child in sorted(node.children, key=lambda c: tree.nodes[c].created_seq):
            emit(child)

    if node_id is not None:
        tree.node(node_id)
        emit(node_id)
    else:
        for root in sorted(tree.roots, key=lambda r: tree.nodes[r].created_seq):
            emit(root)
    return "\n".join(out) if out else "(empty tree)"
