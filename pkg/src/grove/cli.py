"""Command-line surface: train, retrieve, inspect, stats, export-growth,
validate-case. Scripted-agent replay files make every path runnable
offline; a live endpoint is opt-in via --endpoint/--model with the
credential taken from an environment variable, never a flag.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .agent import LiveAgent, ScriptedAgent, serialize_agent_response
from .cases import load_case, load_corpus, render_case_context
from .config import EngineConfig, load_config_file, resolve_engine_config
from .errors import AgentProtocolFailure, GroveError
from .persistence import (
    append_audit,
    export_growth_table,
    load_growth,
    load_tree,
    save_growth,
    save_tree,
    tree_file_lock,
)
from .render import render_inspect
from .training import TreeStore, process_case, train
from .tree import KnowledgeTree
from .validation import ExternalCommand, GoldenMatch, generate_fixes
from .zoom import assemble_knowledge, run_retrieval, start_session


def _write_transcript(session, path: str | None) -> None:
    if not path:
        return
    with open(path, "w", encoding="utf-8") as handle:
        for record in session.transcript:
            handle.write(
                json.dumps(
                    {
                        "round": record["round"],
                        "prompt": record["prompt"],
                        "response": serialize_agent_response(record["response"]),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def _load_replay(path: str) -> dict | list:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, dict) and "cases" in doc:
        return {case_id: list(responses) for case_id, responses in doc["cases"].items()}
    if isinstance(doc, dict) and "responses" in doc:
        return list(doc["responses"])
    raise GroveError(f"replay file {path} must carry 'responses' or 'cases'")


def _make_single_agent(args, config: EngineConfig):
    if args.scripted_agent:
        responses = _load_replay(args.scripted_agent)
        if isinstance(responses, dict):
            raise GroveError("this command needs a flat 'responses' replay file")
        return ScriptedAgent(responses)
    if config.agent is None:
        raise GroveError("give either --scripted-agent or --endpoint and --model")
    return LiveAgent(config.agent)


def _make_train_agents(args, config: EngineConfig, cases):
    if args.scripted_agent:
        replay = _load_replay(args.scripted_agent)
        if isinstance(replay, list):
            raise GroveError("train needs a 'cases' replay file keyed by case_id")
        missing = [c.case_id for c in cases if c.case_id not in replay]
        if missing:
            raise GroveError(f"replay file lacks responses for case(s) {missing[:5]}")
        return {case_id: ScriptedAgent(responses) for case_id, responses in replay.items()}
    if config.agent is None:
        raise GroveError("give either --scripted-agent or --endpoint and --model")
    return LiveAgent(config.agent)


def _make_evaluator(config: EngineConfig):
    if config.evaluator == "golden-match":
        return GoldenMatch()
    if config.evaluator == "external-command":
        if config.eval_command is None:
            raise GroveError("evaluator external-command needs --eval-command TEMPLATE")
        return ExternalCommand(config.eval_command)
    raise GroveError(f"unknown evaluator {config.evaluator!r}")


def _open_tree(args, config: EngineConfig) -> KnowledgeTree:
    path = Path(args.tree)
    if path.exists():
        return load_tree(path)
    if getattr(args, "init", False):
        return KnowledgeTree(config.guards)
    raise GroveError(f"tree file {path} does not exist (use --init to create one)")


def cmd_train(args) -> int:
    config = resolve_engine_config(args, load_config_file(args.config) if args.config else None)
    cases = load_corpus(args.cases)
    training_cases = [c for c in cases if c.golden_fix is not None]
    if not training_cases:
        print("no training cases (none carry a golden fix)", file=sys.stderr)
        return 2
    with tree_file_lock(args.tree):
        tree = _open_tree(args, config)
        agents = _make_train_agents(args, config, training_cases)
        evaluator = _make_evaluator(config)
        store = TreeStore(tree)
        audit_before = len(tree.audit)
        summary = train(training_cases, store, agents, evaluator, config.train)
        save_tree(store.tree, args.tree)
        append_audit(store.tree.audit[audit_before:], args.audit_log or f"{args.tree}.audit")
        save_growth(summary.growth, args.growth_log or f"{args.tree}.growth", append=False)
        print(f"cases processed: {len(summary.outcomes)}")
        print(f"cases integrated: {summary.integrated_count}")
        for reason, count in summary.failure_counts.items():
            print(f"failed ({count}): {reason}")
    return 0


def cmd_retrieve(args) -> int:
    config = resolve_engine_config(args, load_config_file(args.config) if args.config else None)
    case = load_case(args.case)
    tree = load_tree(args.tree)
    agent = _make_single_agent(args, config)
    context = render_case_context(case, include_golden=False)
    session = start_session(
        context, tree, config.budgets, config.max_rounds,
        include_conditions=config.include_conditions,
    )
    try:
        selected = run_retrieval(context, tree, agent, session=session)
    except AgentProtocolFailure as exc:
        _write_transcript(session, args.transcript)
        print(f"retrieval failed: {exc}", file=sys.stderr)
        return 1
    _write_transcript(session, args.transcript)
    block = assemble_knowledge(tree, selected)
    print("selected node ids: " + (" ".join(selected) if selected else "(none)"))
    print(block)
    if args.out:
        Path(args.out).write_text(block + "\n", encoding="utf-8")
    if args.solve:
        if config.evaluator == "golden-match" and case.golden_fix is None:
            print("cannot --solve with golden-match: case has no golden fix", file=sys.stderr)
            return 2
        evaluator = _make_evaluator(config)
        n = config.train.samples
        samples = generate_fixes(case, block, agent, n)
        for number, sample in enumerate(samples):
            if sample is None:
                print(f"sample {number}: no code block (counted as fail)")
                continue
            outcome = evaluator.check(case, sample)
            verdict = "pass" if outcome.passed else f"fail ({outcome.detail})"
            print(f"sample {number}: {verdict}")
    return 0


def cmd_inspect(args) -> int:
    tree = load_tree(args.tree)
    print(render_inspect(tree, args.node))
    return 0


def cmd_stats(args) -> int:
    tree = load_tree(args.tree)
    counts = tree.level_counts()
    for level in range(1, tree.guards.max_depth + 1):
        print(f"level {level}: {counts.get(level, 0)}")
    print(f"roots: {len(tree.roots)}/{tree.guards.max_root_nodes}")
    fanouts = [len(n.children) for n in tree.nodes.values()]
    print(f"max fan-out: {max(fanouts, default=0)}/{tree.guards.max_fanout}")
    print(f"max level: {tree.max_level()}/{tree.guards.max_depth}")
    print(f"deprecated nodes: {tree.deprecated_count()}")
    return 0


def cmd_export_growth(args) -> int:
    records = load_growth(args.growth_log)
    export_growth_table(records, args.out)
    print(f"wrote {len(records)} rows to {args.out}")
    return 0


def cmd_validate_case(args) -> int:
    config = resolve_engine_config(args, load_config_file(args.config) if args.config else None)
    case = load_case(args.case)
    if case.golden_fix is None:
        print(f"case {case.case_id} has no golden fix; cannot validate", file=sys.stderr)
        return 2
    with tree_file_lock(args.tree):
        tree = _open_tree(args, config)
        agent = _make_single_agent(args, config)
        evaluator = _make_evaluator(config)
        store = TreeStore(tree)
        audit_before = len(tree.audit)
        outcome = process_case(case, store, agent, evaluator, config.train)
        print(f"case {outcome.case_id}: proposed={outcome.items_proposed} "
              f"accepted={outcome.items_accepted} integrated={outcome.integrated}")
        if outcome.failure_reason:
            print(f"failure: {outcome.failure_reason}")
        if args.apply and outcome.integrated:
            save_tree(store.tree, args.tree)
            append_audit(store.tree.audit[audit_before:], args.audit_log or f"{args.tree}.audit")
            save_growth(store.growth, args.growth_log or f"{args.tree}.growth", append=True)
    return 0


def _add_shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--snap-budget", type=int, default=None, dest="snap_budget")
    parser.add_argument("--chunk-budget", type=int, default=None, dest="chunk_budget")
    parser.add_argument("--rounds", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--n", type=int, default=None)
    parser.add_argument("--max-reproposals", type=int, default=None, dest="max_reproposals")
    parser.add_argument("--scripted-agent", dest="scripted_agent",
                        help="replay file of canned agent responses")
    parser.add_argument("--endpoint", help="chat-completion endpoint URL")
    parser.add_argument("--model", help="model name for the live endpoint")
    parser.add_argument("--evaluator", choices=["golden-match", "external-command"], default=None)
    parser.add_argument("--eval-command", dest="eval_command",
                        help="command template with {rtl_file} {assertion_file} {workdir}")
    parser.add_argument("--eval-timeout", type=float, default=None, dest="eval_timeout")
    parser.add_argument("--no-apply-conditions", action="store_const", const=True,
                        default=None, dest="no_apply_conditions",
                        help="omit apply_conditions from rendered views")
    parser.add_argument("--max-root-nodes", type=int, default=None, dest="max_root_nodes")
    parser.add_argument("--max-fanout", type=int, default=None, dest="max_fanout")
    parser.add_argument("--max-depth", type=int, default=None, dest="max_depth")
    parser.add_argument("--temperature", type=float, default=None)
    parser.add_argument("--max-retries", type=int, default=None, dest="max_retries")
    parser.add_argument("--timeout", type=float, default=None,
                        help="endpoint timeout in seconds")
    parser.add_argument("--auth-token-env", default=None, dest="auth_token_env",
                        help="environment variable holding the endpoint credential")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grove",
        description="Governed knowledge-tree engine for assertion-failure debugging",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="acquire knowledge from a training corpus")
    p_train.add_argument("--cases", required=True, help="directory of case files")
    p_train.add_argument("--tree", required=True)
    p_train.add_argument("--init", action="store_true", help="create the tree if missing")
    p_train.add_argument("--audit-log", dest="audit_log")
    p_train.add_argument("--growth-log", dest="growth_log")
    _add_shared_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_retrieve = sub.add_parser("retrieve", help="snapshot+zoom retrieval for one case")
    p_retrieve.add_argument("--case", required=True)
    p_retrieve.add_argument("--tree", required=True)
    p_retrieve.add_argument("--out", help="write the knowledge block here")
    p_retrieve.add_argument("--transcript", help="write prompt/response pairs here (JSONL)")
    p_retrieve.add_argument("--solve", action="store_true",
                            help="also sample fixes and report evaluator verdicts")
    _add_shared_flags(p_retrieve)
    p_retrieve.set_defaults(func=cmd_retrieve)

    p_inspect = sub.add_parser("inspect", help="human-oriented unbudgeted render")
    p_inspect.add_argument("--tree", required=True)
    p_inspect.add_argument("--node", help="subtree to render (default: whole forest)")
    p_inspect.set_defaults(func=cmd_inspect)

    p_stats = sub.add_parser("stats", help="level counts and guard headroom")
    p_stats.add_argument("--tree", required=True)
    p_stats.set_defaults(func=cmd_stats)

    p_export = sub.add_parser("export-growth", help="growth log to a step-by-level table")
    p_export.add_argument("--growth-log", required=True, dest="growth_log")
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export_growth)

    p_validate = sub.add_parser("validate-case", help="run one case through the training gate")
    p_validate.add_argument("--case", required=True)
    p_validate.add_argument("--tree", required=True)
    p_validate.add_argument("--init", action="store_true")
    p_validate.add_argument("--apply", action="store_true",
                            help="persist the tree if the case integrates")
    p_validate.add_argument("--audit-log", dest="audit_log")
    p_validate.add_argument("--growth-log", dest="growth_log")
    _add_shared_flags(p_validate)
    p_validate.set_defaults(func=cmd_validate_case)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GroveError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
