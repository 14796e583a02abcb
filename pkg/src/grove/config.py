"""Engine configuration: one file, every field overridable by a CLI flag."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentConfig
from .errors import IoError
from .render import TokenBudget
from .tree import ShapeGuardConfig
from .training import TrainConfig
from .validation import ExternalCommandConfig


@dataclass
class EngineConfig:
    budgets: TokenBudget = field(default_factory=TokenBudget)
    guards: ShapeGuardConfig = field(default_factory=ShapeGuardConfig)
    max_rounds: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    agent: AgentConfig | None = None
    evaluator: str = "golden-match"  # "golden-match" | "external-command"
    eval_command: ExternalCommandConfig | None = None
    include_conditions: bool = True


def load_config_file(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise IoError(f"config file {path} must hold a JSON object")
    return doc


def _pick(flag_value, file_doc: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    if key in file_doc:
        return file_doc[key]
    return default


def resolve_engine_config(args, file_doc: dict | None = None) -> EngineConfig:
    """Merge defaults, config-file values, and CLI flags (flags win)."""
    doc = file_doc or {}
    budgets = TokenBudget(
        snap_budget=_pick(getattr(args, "snap_budget", None), doc, "snap_budget", 80000),
        chunk_budget=_pick(getattr(args, "chunk_budget", None), doc, "chunk_budget", 12000),
    )
    guards_doc = doc.get("guards", {})
    guards = ShapeGuardConfig(
        max_root_nodes=_pick(
            getattr(args, "max_root_nodes", None), guards_doc, "max_root_nodes", 216
        ),
        max_fanout=_pick(getattr(args, "max_fanout", None), guards_doc, "max_fanout", 144),
        max_depth=_pick(getattr(args, "max_depth", None), guards_doc, "max_depth", 6),
    )
    max_rounds = _pick(getattr(args, "rounds", None), doc, "rounds", 10)
    include_conditions = not _pick(
        getattr(args, "no_apply_conditions", None), doc, "no_apply_conditions", False
    )
    train = TrainConfig(
        num_workers=_pick(getattr(args, "workers", None), doc, "workers", 8),
        budgets=budgets,
        max_rounds=max_rounds,
        k=_pick(getattr(args, "k", None), doc, "k", 1),
        n=_pick(getattr(args, "n", None), doc, "n", None),
        max_reproposals=_pick(
            getattr(args, "max_reproposals", None), doc, "max_reproposals", 3
        ),
        include_conditions=include_conditions,
    )
    endpoint = _pick(getattr(args, "endpoint", None), doc, "endpoint", None)
    model = _pick(getattr(args, "model", None), doc, "model", None)
    agent = None
    if endpoint and model:
        agent = AgentConfig(
            endpoint_url=endpoint,
            model_name=model,
            temperature=_pick(getattr(args, "temperature", None), doc, "temperature", None),
            max_retries=_pick(getattr(args, "max_retries", None), doc, "max_retries", 3),
            timeout=_pick(getattr(args, "timeout", None), doc, "timeout", 60.0),
            auth_token_env=_pick(
                getattr(args, "auth_token_env", None), doc, "auth_token_env", "GROVE_API_TOKEN"
            ),
        )
    evaluator = _pick(getattr(args, "evaluator", None), doc, "evaluator", "golden-match")
    eval_command = None
    command_template = _pick(getattr(args, "eval_command", None), doc, "eval_command", None)
    if command_template:
        eval_command = ExternalCommandConfig(
            command_template=command_template,
            timeout=_pick(getattr(args, "eval_timeout", None), doc, "eval_timeout", 300.0),
        )
    return EngineConfig(
        budgets=budgets,
        guards=guards,
        max_rounds=max_rounds,
        train=train,
        agent=agent,
        evaluator=evaluator,
        eval_command=eval_command,
        include_conditions=include_conditions,
    )
