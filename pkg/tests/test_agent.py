import hashlib
import json

import pytest
from hypothesis import given, settings, strategies as st

from grove.agent import (
    AgentConfig,
    AgentResponse,
    LiveAgent,
    ScriptedAgent,
    ask,
    complete,
    parse_agent_response,
    serialize_agent_response,
)
from grove.errors import (
    AgentProtocolFailure,
    AuthError,
    JsonSyntaxError,
    SchemaError,
    ScriptedAgentExhausted,
    TimeoutError,
    TransportError,
)
from grove.render import ReadOp

CONFIG = AgentConfig(endpoint_url="http://example.invalid/v1/chat", model_name="test-model")


def ok_transport(text):
    def transport(config, payload, token):
        return {"choices": [{"message": {"content": text}}]}

    return transport


class TestComplete:
    def test_mock_transport_passthrough(self, monkeypatch):
        monkeypatch.setenv("GROVE_API_TOKEN", "secret")
        assert complete(CONFIG, "hi", transport=ok_transport("ok")) == "ok"

    def test_missing_credential_is_auth_error(self, monkeypatch):
        monkeypatch.delenv("GROVE_API_TOKEN", raising=False)
        with pytest.raises(AuthError):
            complete(CONFIG, "hi", transport=ok_transport("ok"))

    def test_timeout_surfaces_as_timeout_error(self, monkeypatch):
        monkeypatch.setenv("GROVE_API_TOKEN", "secret")

        def slow_transport(config, payload, token):
            raise TimeoutError(f"no answer within {config.timeout}s")

        with pytest.raises(TimeoutError):
            complete(CONFIG, "hi", transport=slow_transport)

    def test_payload_carries_model_and_prompt(self, monkeypatch):
        monkeypatch.setenv("GROVE_API_TOKEN", "secret")
        seen = {}

        def transport(config, payload, token):
            seen.update(payload)
            return {"choices": [{"message": {"content": "x"}}]}

        complete(CONFIG, "the prompt", transport=transport)
        assert seen["model"] == "test-model"
        assert seen["messages"] == [{"role": "user", "content": "the prompt"}]
        assert "temperature" not in seen  # none configured, none imposed

    def test_malformed_body_is_transport_error(self, monkeypatch):
        monkeypatch.setenv("GROVE_API_TOKEN", "secret")
        with pytest.raises(TransportError):
            complete(CONFIG, "hi", transport=lambda *a: {"nope": True})

    def test_requests_timeout_maps_to_timeout_error(self, monkeypatch):
        import requests

        monkeypatch.setenv("GROVE_API_TOKEN", "secret")
        monkeypatch.setattr(
            requests, "post", lambda *a, **k: (_ for _ in ()).throw(requests.Timeout("slow"))
        )
        with pytest.raises(TimeoutError):
            complete(CONFIG, "hi")

    def test_connection_error_maps_to_transport_error(self, monkeypatch):
        import requests

        monkeypatch.setenv("GROVE_API_TOKEN", "secret")
        monkeypatch.setattr(
            requests,
            "post",
            lambda *a, **k: (_ for _ in ()).throw(requests.ConnectionError("refused")),
        )
        with pytest.raises(TransportError):
            complete(CONFIG, "hi")


class TestParseAgentResponse:
    def test_selection_only(self):
        response = parse_agent_response('{"read_ops":[],"select_node_ids":["n3"]}', "retrieval")
        assert response.select_node_ids == ("n3",)
        assert response.read_ops == ()

    def test_fenced_json_equals_bare_json(self):
        raw = '{"read_ops":[],"select_node_ids":["n3"]}'
        fenced = f"```json\n{raw}\n```"
        assert parse_agent_response(fenced, "retrieval") == parse_agent_response(raw, "retrieval")

    def test_unknown_read_op_is_schema_error(self):
        raw = '{"read_ops":[{"op":"delete_node","node_id":"n1"}]}'
        with pytest.raises(SchemaError):
            parse_agent_response(raw, "retrieval")

    def test_non_string_ids_rejected(self):
        with pytest.raises(SchemaError):
            parse_agent_response('{"select_node_ids":[3]}', "retrieval")

    def test_missing_everything_is_schema_error(self):
        with pytest.raises(SchemaError):
            parse_agent_response("{}", "retrieval")

    def test_garbage_is_json_syntax_error(self):
        with pytest.raises(JsonSyntaxError):
            parse_agent_response("not json at all", "retrieval")

    def test_edit_script_ignored_in_retrieval_mode(self):
        raw = json.dumps(
            {"select_node_ids": ["n1"], "edit_script": {"ops": [{"type": "bogus"}]}}
        )
        response = parse_agent_response(raw, "retrieval")
        assert response.edit_script_json is None

    def test_edit_script_validated_in_training_mode(self):
        raw = json.dumps({"edit_script": {"ops": [{"type": "bogus"}]}})
        with pytest.raises(SchemaError):
            parse_agent_response(raw, "training")

    def test_unknown_extra_fields_ignored(self):
        raw = '{"select_node_ids":["n1"],"confidence":0.9}'
        response = parse_agent_response(raw, "retrieval")
        assert response.select_node_ids == ("n1",)


class TestAsk:
    def test_retry_recovers_on_second_attempt(self):
        agent = ScriptedAgent(["garbage", '{"read_ops":[],"select_node_ids":["n1"]}'],
                              max_retries=3)
        response = ask(agent, "prompt", "retrieval")
        assert response.select_node_ids == ("n1",)
        assert len(agent.prompts) == 2
        assert agent.prompts[0] == "prompt"
        assert agent.prompts[1].startswith("prompt\n\n## response error\n")

    def test_four_garbage_responses_exhaust_three_retries(self):
        agent = ScriptedAgent(["garbage"] * 4, max_retries=3)
        with pytest.raises(AgentProtocolFailure):
            ask(agent, "prompt", "retrieval")
        assert len(agent.prompts) == 4

    def test_valid_first_response_is_single_call(self):
        agent = ScriptedAgent(['{"read_ops":[],"select_node_ids":[]}'])
        ask(agent, "prompt", "retrieval")
        assert len(agent.prompts) == 1

    def test_transport_calls_bounded_by_retries(self):
        calls = []

        class FailingAgent:
            max_retries = 2

            def complete(self, prompt):
                calls.append(prompt)
                raise TransportError("down")

        with pytest.raises(AgentProtocolFailure):
            ask(FailingAgent(), "p", "retrieval")
        assert len(calls) == 3  # max_retries + 1

    def test_scripted_exhaustion_is_an_error(self):
        agent = ScriptedAgent([])
        with pytest.raises(ScriptedAgentExhausted):
            agent.complete("p")


class TestScriptedDeterminism:
    def test_transcript_hash_stable_across_runs(self):
        def run():
            agent = ScriptedAgent(
                [
                    AgentResponse(read_ops=(ReadOp("expand_node", "n1"),)),
                    AgentResponse(select_node_ids=("n2", "n3")),
                ]
            )
            transcript = [agent.complete("p1"), agent.complete("p2")]
            return hashlib.sha256("\n".join(transcript).encode()).hexdigest()

        assert run() == run()


read_ops_strategy = st.lists(
    st.builds(
        ReadOp,
        kind=st.sampled_from(["expand_node", "list_children"]),
        target=st.from_regex(r"n[0-9]{1,4}", fullmatch=True),
    ),
    max_size=4,
)


class TestRoundTrip:
    @given(
        read_ops_strategy,
        st.lists(st.from_regex(r"n[0-9]{1,4}", fullmatch=True), max_size=4),
    )
    @settings(max_examples=80)
    def test_parse_of_serialize_is_identity(self, read_ops, selections):
        response = AgentResponse(
            read_ops=tuple(read_ops), select_node_ids=tuple(selections)
        )
        wire = serialize_agent_response(response)
        assert parse_agent_response(wire, "retrieval") == response

    def test_round_trip_with_edit_script(self, fixture_tree):
        from conftest import width_mismatch_script_doc

        script = json.dumps(
            width_mismatch_script_doc(fixture_tree.roots[1]),
            sort_keys=True,
            separators=(",", ":"),
        )
        response = AgentResponse(edit_script_json=script)
        wire = serialize_agent_response(response)
        assert parse_agent_response(wire, "training") == response


class TestLiveAgent:
    def test_delegates_to_transport(self, monkeypatch):
        monkeypatch.setenv("GROVE_API_TOKEN", "secret")
        agent = LiveAgent(CONFIG, transport=ok_transport("answer"))
        assert agent.complete("q") == "answer"
        assert agent.max_retries == CONFIG.max_retries

    def test_in_flight_cap_accepts_serial_use(self, monkeypatch):
        monkeypatch.setenv("GROVE_API_TOKEN", "secret")
        agent = LiveAgent(CONFIG, transport=ok_transport("a"), max_in_flight=1)
        assert agent.complete("q1") == "a"
        assert agent.complete("q2") == "a"
