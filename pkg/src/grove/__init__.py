"""Governed knowledge-tree engine for RTL assertion-failure debugging.

Training distills validated debugging knowledge from solved cases into a
governed hierarchical tree via agent-proposed JSON edit scripts; test-time
retrieval navigates a token-budgeted snapshot of that tree with iterative
zoom operations and assembles the selected items into a prompt block.
"""

from .agent import AgentConfig, AgentResponse, LiveAgent, ScriptedAgent, ask, parse_agent_response
from .cases import DatasetSplit, DebugCase, GoldenFix, load_case, load_corpus, parse_case, split_dataset
from .edits import (
    ApplyResult,
    CandidateItem,
    EditScript,
    apply_script,
    check_script,
    extract_candidates,
    parse_script,
    serialize_script,
)
from .errors import GroveError
from .render import (
    DetailView,
    ReadOp,
    Snapshot,
    TokenBudget,
    estimate_tokens,
    render_children,
    render_snapshot,
    render_subtree,
)
from .training import CaseOutcome, TrainConfig, TrainSummary, TreeStore, process_case, train
from .tree import AuditEvent, KnowledgeNode, KnowledgeTree, ShapeGuardConfig
from .validation import (
    ExternalCommand,
    ExternalCommandConfig,
    FixCandidate,
    GoldenMatch,
    PassAtK,
    ValidationVerdict,
    generate_fixes,
    golden_match_check,
    pass_at_k,
    validate_item,
)
from .zoom import ZoomSession, assemble_knowledge, construct_prompt, run_edit_session, run_retrieval

__version__ = "0.1.0"
