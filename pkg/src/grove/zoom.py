"""Iterative snapshot+zoom sessions over the knowledge tree.

Both session kinds share the same loop: show the case context, the
budgeted snapshot, and every detail view gathered so far; let the agent
either zoom further (read_ops) or finish. Retrieval sessions accumulate
select_node_ids and end when a round requests no reads (or after
max_rounds); edit sessions end as soon as a response carries an edit
script.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .agent import AgentResponse, ask
from .cases import DebugCase, render_case_context
from .edits import EditScript, parse_script
from .errors import DeprecatedNode, NoScriptProduced, UnknownNode
from .render import (
    DetailView,
    Snapshot,
    TokenBudget,
    estimate_tokens,
    render_children,
    render_snapshot,
    render_subtree,
)
from .tree import KnowledgeTree

MAX_READ_OPS_PER_ROUND = 8

RETRIEVAL_SCHEMA = """Respond with a single JSON object of this exact shape:
{"read_ops": [{"op": "expand_node" | "list_children", "node_id": "<id>"}], "select_node_ids": ["<id>"]}
- read_ops: zoom actions revealing more of the tree (at most 8 per round).
- select_node_ids: ids of knowledge items whose apply_conditions match this case.
Returning an empty read_ops list ends the session with your accumulated selections."""

TRAINING_SCHEMA = """Respond with a single JSON object. While exploring, use:
{"read_ops": [{"op": "expand_node" | "list_children", "node_id": "<id>"}]}
To finish, return your tree edits instead:
{"edit_script": {"ops": [{"type": "insert_node", "parent_ref": {"id": "<id>"}, "node": {"level": <int>, "title": "...", "knowledge_statement": "...", "apply_conditions": "..."}}]}}
Op types: insert_node, update_node (ref + field_updates), move_node (ref + new_parent_ref), deprecate_node (ref).
Refs are {"id": "<id>"} or {"path": "Title/Title"}; "$k" names the node created by op k of this script.
Every inserted node needs nonempty apply_conditions and level = parent level + 1 (1 for roots).
A response with neither read_ops nor an edit_script ends the session without edits."""


@dataclass
class ZoomSession:
    """State of one session: snapshot, accumulated views, candidate ids."""

    context: str
    tree: KnowledgeTree
    snapshot: Snapshot
    budget: TokenBudget
    max_rounds: int
    mode: str = "retrieval"
    include_conditions: bool = True
    details: list[DetailView] = field(default_factory=list)
    candidates: list[str] = field(default_factory=list)
    round: int = 0
    transcript: list[dict] = field(default_factory=list)

    def add_candidates(self, node_ids) -> None:
        """Accumulate selections, keeping only ids active in the session view."""
        for node_id in node_ids:
            if node_id not in self.candidates and self.tree.has_active(node_id):
                self.candidates.append(node_id)


def start_session(
    context: str,
    tree: KnowledgeTree,
    budget: TokenBudget | None = None,
    max_rounds: int = 10,
    mode: str = "retrieval",
    include_conditions: bool = True,
) -> ZoomSession:
    budget = budget or TokenBudget()
    snapshot = render_snapshot(tree, budget, include_conditions)
    return ZoomSession(
        context=context,
        tree=tree,
        snapshot=snapshot,
        budget=budget,
        max_rounds=max_rounds,
        mode=mode,
        include_conditions=include_conditions,
    )


def construct_prompt(session: ZoomSession) -> str:
    """Context, snapshot, detail views in acquisition order, response schema.

    Only the tree views are budgeted; the case context is never truncated.
    """
    parts = [session.context, "## knowledge tree snapshot\n" + session.snapshot.text]
    for number, view in enumerate(session.details, start=1):
        parts.append(
            f"## detail view {number} ({view.origin.kind} {view.origin.target})\n{view.text}"
        )
    schema = RETRIEVAL_SCHEMA if session.mode == "retrieval" else TRAINING_SCHEMA
    parts.append("## response format\n" + schema)
    return "\n\n".join(parts)


def _error_view(op, exc: Exception) -> DetailView:
    text = f"error for {op.kind} {op.target}: {type(exc).__name__}: {exc}"
    return DetailView(origin=op, text=text, token_count=estimate_tokens(text))


def execute_read_ops(session: ZoomSession, read_ops) -> None:
    """Render each requested view. Unknown or deprecated targets produce an
    in-band error notice instead of aborting, so a live agent can recover."""
    for op in read_ops[:MAX_READ_OPS_PER_ROUND]:
        try:
            if op.kind == "expand_node":
                view = render_subtree(
                    session.tree, op.target, session.budget.chunk_budget,
                    session.include_conditions,
                )
            else:
                view = render_children(
                    session.tree, op.target, session.budget.chunk_budget,
                    session.include_conditions,
                )
        except (UnknownNode, DeprecatedNode) as exc:
            view = _error_view(op, exc)
        session.details.append(view)


def _one_round(session: ZoomSession, agent) -> AgentResponse:
    prompt = construct_prompt(session)
    response = ask(agent, prompt, session.mode)
    session.round += 1
    session.transcript.append(
        {"round": session.round, "prompt": prompt, "response": response}
    )
    return response


def finalize_selection(tree: KnowledgeTree, candidates) -> list[str]:
    """Deduplicated candidates restricted to currently active nodes."""
    out: list[str] = []
    for node_id in candidates:
        if node_id not in out and tree.has_active(node_id):
            out.append(node_id)
    return out


def run_rounds(session: ZoomSession, agent) -> ZoomSession:
    """The retrieval loop: select, zoom, break on an empty read_ops list."""
    while session.round < session.max_rounds:
        response = _one_round(session, agent)
        session.add_candidates(response.select_node_ids)
        if response.read_ops:
            execute_read_ops(session, response.read_ops)
        else:
            break
    return session


def run_retrieval(
    case_context: str,
    tree: KnowledgeTree,
    agent,
    budget: TokenBudget | None = None,
    max_rounds: int = 10,
    *,
    include_conditions: bool = True,
    session: ZoomSession | None = None,
) -> list[str]:
    """Run a retrieval session and return the final candidate node ids.

    Pass a pre-built session to observe the transcript and detail views.
    """
    if session is None:
        session = start_session(
            case_context, tree, budget, max_rounds, "retrieval", include_conditions
        )
    run_rounds(session, agent)
    return finalize_selection(session.tree, session.candidates)


def run_edit_session(
    case: DebugCase,
    tree: KnowledgeTree,
    agent,
    budget: TokenBudget | None = None,
    max_rounds: int = 10,
    *,
    include_conditions: bool = True,
    session: ZoomSession | None = None,
) -> EditScript:
    """Golden-aware reflection: explore the tree, then emit an edit script."""
    if case.golden_fix is None:
        raise ValueError(f"case {case.case_id} has no golden fix; edit sessions need one")
    if session is None:
        context = render_case_context(case, include_golden=True)
        session = start_session(context, tree, budget, max_rounds, "training", include_conditions)
    while session.round < session.max_rounds:
        response = _one_round(session, agent)
        if response.edit_script_json is not None:
            return parse_script(response.edit_script_json, provenance=case.case_id)
        if response.read_ops:
            execute_read_ops(session, response.read_ops)
        else:
            break
    raise NoScriptProduced(
        f"session for case {case.case_id} ended after round {session.round} without a script"
    )


def format_knowledge_item(title: str, statement: str) -> str:
    """Render one knowledge item the way it is injected into prompts."""
    if title:
        return f"## {title}\n{statement}"
    return statement


def assemble_knowledge(tree: KnowledgeTree, node_ids) -> str:
    """Final prompt augmentation: title + statement per node, in created_seq
    order. apply_conditions guide selection inside the session but are not
    part of the assembled block."""
    nodes = []
    for node_id in set(node_ids):
        node = tree.node(node_id)
        if not node.active:
            raise UnknownNode(f"node {node_id} is not active")
        nodes.append(node)
    nodes.sort(key=lambda n: n.created_seq)
    return "\n\n".join(format_knowledge_item(n.title, n.knowledge_statement) for n in nodes)
