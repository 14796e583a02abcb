"""The seam to the LLM: live chat-completion transport, strict response
parsing with bounded retries, and a deterministic scripted agent for tests
and offline replay.

Response wire schema:

    {"read_ops": [{"op": "expand_node" | "list_children", "node_id": "..."}],
     "select_node_ids": ["..."]}

Training sessions may additionally carry ``"edit_script": {"ops": [...]}``.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass

import requests

from .edits import parse_script, strip_fence
from .errors import (
    AgentProtocolFailure,
    AuthError,
    JsonSyntaxError,
    SchemaError,
    ScriptedAgentExhausted,
    TimeoutError,
    TransportError,
)
from .render import ReadOp

logger = logging.getLogger(__name__)

READ_OP_KINDS = ("expand_node", "list_children")
MODES = ("retrieval", "training")


@dataclass(frozen=True)
class AgentConfig:
    """Connection settings for a chat-completion endpoint."""

    endpoint_url: str
    model_name: str
    temperature: float | None = None
    max_retries: int = 3
    timeout: float = 60.0
    auth_token_env: str = "GROVE_API_TOKEN"

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class AgentResponse:
    """Parsed agent turn. Retrieval ignores edit_script_json; training ignores selections."""

    read_ops: tuple[ReadOp, ...] = ()
    select_node_ids: tuple[str, ...] = ()
    edit_script_json: str | None = None


def _http_transport(config: AgentConfig, payload: dict, token: str) -> dict:
    try:
        response = requests.post(
            config.endpoint_url,
            json=payload,
            headers={"Authorization": f"Bearer {token}"},
            timeout=config.timeout,
        )
    except requests.Timeout as exc:
        raise TimeoutError(f"no answer from {config.endpoint_url} within {config.timeout}s") from exc
    except requests.RequestException as exc:
        raise TransportError(f"request to {config.endpoint_url} failed: {exc}") from exc
    if response.status_code >= 400:
        raise TransportError(f"endpoint returned HTTP {response.status_code}")
    try:
        return response.json()
    except ValueError as exc:
        raise TransportError(f"endpoint returned non-JSON body: {exc}") from exc


def complete(config: AgentConfig, prompt: str, transport=None) -> str:
    """Send one prompt, return the raw model text. No parsing, no retries."""
    token = os.environ.get(config.auth_token_env, "")
    if not token:
        raise AuthError(f"environment variable {config.auth_token_env} is not set")
    payload: dict = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
    }
    if config.temperature is not None:
        payload["temperature"] = config.temperature
    body = (transport or _http_transport)(config, payload, token)
    try:
        return body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion body: {exc}") from exc


class LiveAgent:
    """Shareable handle on a live endpoint; safe for concurrent asks."""

    def __init__(self, config: AgentConfig, transport=None, max_in_flight: int | None = None):
        self.config = config
        self._transport = transport
        self._gate = threading.Semaphore(max_in_flight) if max_in_flight else None

    @property
    def max_retries(self) -> int:
        return self.config.max_retries

    def complete(self, prompt: str) -> str:
        if self._gate is None:
            return complete(self.config, prompt, self._transport)
        with self._gate:
            return complete(self.config, prompt, self._transport)


class ScriptedAgent:
    """Deterministic test double: canned responses consumed strictly in order.

    Entries may be raw strings (exercising the parser) or AgentResponse
    values, which are serialized to the wire form before being returned.
    """

    def __init__(self, responses, max_retries: int = 3):
        self._responses = list(responses)
        self._index = 0
        self._lock = threading.Lock()
        self.max_retries = max_retries
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.prompts.append(prompt)
            if self._index >= len(self._responses):
                raise ScriptedAgentExhausted(
                    f"scripted agent ran out after {len(self._responses)} responses"
                )
            entry = self._responses[self._index]
            self._index += 1
        if isinstance(entry, AgentResponse):
            return serialize_agent_response(entry)
        return entry

    @property
    def remaining(self) -> int:
        return len(self._responses) - self._index


def serialize_agent_response(response: AgentResponse) -> str:
    doc: dict = {
        "read_ops": [{"op": op.kind, "node_id": op.target} for op in response.read_ops],
        "select_node_ids": list(response.select_node_ids),
    }
    if response.edit_script_json is not None:
        doc["edit_script"] = json.loads(response.edit_script_json)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def parse_agent_response(raw: str, mode: str) -> AgentResponse:
    """Strict parse of one agent turn; strips at most one code fence first."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    try:
        doc = json.loads(strip_fence(raw))
    except json.JSONDecodeError as exc:
        raise JsonSyntaxError(f"response is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("response must be a JSON object")

    known = {"read_ops", "select_node_ids"}
    if mode == "training":
        known.add("edit_script")
    if not (known & set(doc)):
        raise SchemaError(f"response carries none of the expected fields {sorted(known)}")

    read_ops: list[ReadOp] = []
    for entry in doc.get("read_ops", []) or []:
        if not isinstance(entry, dict):
            raise SchemaError("read_ops entries must be objects")
        kind = entry.get("op")
        target = entry.get("node_id")
        if kind not in READ_OP_KINDS:
            raise SchemaError(f"unknown read op {kind!r}")
        if not isinstance(target, str) or not target:
            raise SchemaError("read op node_id must be a nonempty string")
        read_ops.append(ReadOp(kind, target))

    selections = doc.get("select_node_ids", []) or []
    if not isinstance(selections, list) or not all(isinstance(s, str) for s in selections):
        raise SchemaError("select_node_ids must be an array of strings")

    script_json: str | None = None
    if mode == "training" and doc.get("edit_script") is not None:
        script_json = json.dumps(
            doc["edit_script"], sort_keys=True, separators=(",", ":"), ensure_ascii=False
        )
        parse_script(script_json)  # validate now so retries can correct the agent

    return AgentResponse(
        read_ops=tuple(read_ops),
        select_node_ids=tuple(selections),
        edit_script_json=script_json,
    )


def ask(agent, prompt: str, mode: str) -> AgentResponse:
    """complete + parse, re-prompting with the error appended on failure.

    A machine-readable error section is appended to the original prompt
    rather than mutating it, so transcripts stay auditable. The same
    mechanism carries transport hiccups. Gives up with
    AgentProtocolFailure after max_retries consecutive failures.
    """
    retries = getattr(agent, "max_retries", 3)
    attempt_prompt = prompt
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        try:
            raw = agent.complete(attempt_prompt)
            return parse_agent_response(raw, mode)
        except (JsonSyntaxError, SchemaError, TransportError) as exc:
            last_error = exc
            logger.debug("attempt %d failed: %s", attempt + 1, exc)
            attempt_prompt = (
                prompt
                + "\n\n## response error\n"
                + f"{type(exc).__name__}: {exc}\n"
                + "Respond again following the response format exactly."
            )
    raise AgentProtocolFailure(
        f"no valid response after {retries + 1} attempts: {type(last_error).__name__}: {last_error}"
    )
