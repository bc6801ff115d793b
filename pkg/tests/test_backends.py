import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentloom import backends
from agentloom.backends import (
    BackendConfigError,
    BackendError,
    ChatMessage,
    ChatRequest,
    Completion,
    MockBackend,
    MockScript,
    OpenAICompatibleBackend,
    ToolSchema,
    Usage,
    create_backend,
    estimate_tokens,
    parse_mock_script,
)
from agentloom.schema import ModelConfig


def mock_model(**kw):
    defaults = dict(id="m1", name="mock", provider="mock", model_name="scripted")
    defaults.update(kw)
    return ModelConfig(**defaults)


def req(content="hi", model=None):
    return ChatRequest(model=model or mock_model(),
                       messages=(ChatMessage(role="user", content=content),))


class TestEstimateTokens:
    def test_empty(self):
        assert estimate_tokens("") == 0

    def test_eight_ascii_chars(self):
        assert estimate_tokens("abcdefgh") == 2

    def test_nine_ascii_chars(self):
        assert estimate_tokens("abcdefghi") == 3

    def test_counts_utf8_bytes(self):
        assert estimate_tokens("é" * 4) == 2  # 2 bytes each

    @given(st.text(max_size=500), st.text(max_size=100))
    def test_monotone_in_length(self, a, b):
        assert estimate_tokens(a + b) >= estimate_tokens(a)


class TestMockBackend:
    def test_scripted_echo_with_estimated_usage(self):
        b = MockBackend(MockScript(steps=(Completion(content="TERMINATE"),)))
        out = b.complete(req("hello"))
        assert out.content == "TERMINATE"
        assert out.usage.usage_estimated is True
        assert out.usage.completion_tokens == estimate_tokens("TERMINATE")
        assert out.usage.prompt_tokens == estimate_tokens("hello")

    def test_repeat_last_when_exhausted(self):
        b = MockBackend(MockScript(steps=(Completion(content="one"), Completion(content="two"))))
        assert [b.complete(req()).content for _ in range(3)] == ["one", "two", "two"]

    def test_exhausted_error(self):
        b = MockBackend(MockScript(steps=(Completion(content="only"),), exhausted_behavior="error"))
        b.complete(req())
        with pytest.raises(BackendError):
            b.complete(req())

    def test_explicit_usage_passed_through(self):
        usage = Usage(prompt_tokens=7, completion_tokens=11, usage_estimated=False)
        b = MockBackend(MockScript(steps=(Completion(content="x", usage=usage),)))
        assert b.complete(req()).usage == usage

    def test_deterministic_for_same_state(self):
        script = MockScript(steps=(Completion(content="a"), Completion(content="b")))
        outs1 = [MockBackend(script).complete(req("z")) for _ in range(1)]
        outs2 = [MockBackend(script).complete(req("z")) for _ in range(1)]
        assert outs1 == outs2

    def test_concurrent_callers_see_consistent_sequence(self):
        steps = tuple(Completion(content=str(i)) for i in range(50))
        b = MockBackend(MockScript(steps=steps, exhausted_behavior="repeat_last"))
        seen = []
        lock = threading.Lock()

        def worker():
            for _ in range(10):
                c = b.complete(req())
                with lock:
                    seen.append(c.content)

        threads = [threading.Thread(target=worker) for _ in range(5)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(seen, key=int) == [str(i) for i in range(50)]

    def test_request_not_mutated_and_logged(self):
        b = MockBackend(MockScript(steps=(Completion(content="ok"),)))
        r = req("stable")
        b.complete(r)
        assert r.messages[0].content == "stable"
        assert b.calls == [r]


class TestMockScriptParsing:
    def test_parse_full_document(self):
        doc = {
            "steps": [
                {"content": "use the tool",
                 "tool_calls": [{"name": "echo_skill", "arguments": {"text": "hi"}}]},
                {"content": "TERMINATE", "usage": {"prompt_tokens": 1, "completion_tokens": 2}},
            ],
            "exhausted_behavior": "error",
        }
        script = parse_mock_script(json.dumps(doc))
        assert script.steps[0].tool_calls[0].name == "echo_skill"
        assert script.steps[1].usage.completion_tokens == 2
        assert script.exhausted_behavior == "error"

    def test_rejects_empty_steps(self):
        with pytest.raises(Exception):
            parse_mock_script({"steps": []})

    def test_script_file_resolution(self, tmp_path):
        script_file = tmp_path / "script.json"
        script_file.write_text(json.dumps({"steps": [{"content": "from file"}]}))
        model = mock_model(base_url=str(script_file))
        b = create_backend(model, environ={})
        assert b.complete(req()).content == "from file"

    def test_relative_script_path_uses_base_dir(self, tmp_path):
        (tmp_path / "s.json").write_text(json.dumps({"steps": [{"content": "rel"}]}))
        b = create_backend(mock_model(base_url="s.json"), environ={}, base_dir=tmp_path)
        assert b.complete(req()).content == "rel"

    def test_default_script_when_nothing_registered(self):
        b = create_backend(mock_model(), environ={})
        assert "TERMINATE" in b.complete(req()).content


class _StubHandler(BaseHTTPRequestHandler):
    response_body: dict = {}
    status_code = 200
    requests: list = []
    fail_times = 0

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests.append({"path": self.path, "body": body,
                                    "auth": self.headers.get("Authorization")})
        if type(self).fail_times > 0:
            type(self).fail_times -= 1
            self.send_response(503)
            self.end_headers()
            self.wfile.write(b"{}")
            return
        payload = json.dumps(type(self).response_body).encode()
        self.send_response(type(self).status_code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.requests = []
    _StubHandler.status_code = 200
    _StubHandler.fail_times = 0
    _StubHandler.response_body = {
        "choices": [{"message": {"content": "stubbed reply"}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 5},
    }
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", _StubHandler
    server.shutdown()
    thread.join(timeout=5)


class TestOpenAICompatible:
    def model(self, base_url):
        return ModelConfig(id="m-oa", name="remote", provider="openai-compatible",
                           model_name="gpt-test", base_url=base_url, api_key_ref="STUB_KEY",
                           temperature=0.5, max_tokens=64)

    def test_parses_stub_response(self, stub_server):
        url, handler = stub_server
        b = OpenAICompatibleBackend(self.model(url), environ={"STUB_KEY": "sekrit"})
        out = b.complete(req("question", model=self.model(url)))
        assert out.content == "stubbed reply"
        assert out.usage == Usage(prompt_tokens=12, completion_tokens=5, usage_estimated=False)
        sent = handler.requests[0]
        assert sent["path"] == "/chat/completions"
        assert sent["auth"] == "Bearer sekrit"
        assert sent["body"]["model"] == "gpt-test"
        assert sent["body"]["messages"] == [{"role": "user", "content": "question"}]

    def test_missing_env_var_fails_construction(self):
        with pytest.raises(BackendConfigError) as exc:
            OpenAICompatibleBackend(self.model("http://example.invalid"), environ={})
        assert "m-oa" in str(exc.value)

    def test_tool_calls_parsed(self, stub_server):
        url, handler = stub_server
        handler.response_body = {
            "choices": [{"message": {
                "content": "",
                "tool_calls": [{"function": {"name": "echo_skill",
                                             "arguments": json.dumps({"text": "hi"})}}],
            }}],
            "usage": {"prompt_tokens": 1, "completion_tokens": 1},
        }
        b = OpenAICompatibleBackend(self.model(url), environ={"STUB_KEY": "k"})
        out = b.complete(ChatRequest(model=self.model(url),
                                     messages=(ChatMessage("user", "go"),),
                                     tool_schemas=(ToolSchema(name="echo_skill"),)))
        assert out.tool_calls[0].name == "echo_skill"
        assert out.tool_calls[0].arguments == {"text": "hi"}
        assert handler.requests[0]["body"]["tools"][0]["function"]["name"] == "echo_skill"

    def test_missing_usage_estimated(self, stub_server):
        url, handler = stub_server
        handler.response_body = {"choices": [{"message": {"content": "no usage here"}}]}
        b = OpenAICompatibleBackend(self.model(url), environ={"STUB_KEY": "k"})
        out = b.complete(req("q", model=self.model(url)))
        assert out.usage.usage_estimated is True

    def test_retries_on_5xx_then_succeeds(self, stub_server, monkeypatch):
        url, handler = stub_server
        handler.fail_times = 1
        naps = []
        monkeypatch.setattr(backends, "_sleep", naps.append)
        b = OpenAICompatibleBackend(self.model(url), environ={"STUB_KEY": "k"})
        out = b.complete(req("q", model=self.model(url)))
        assert out.content == "stubbed reply"
        assert naps == [0.5]

    def test_no_retry_on_4xx(self, stub_server, monkeypatch):
        url, handler = stub_server
        handler.status_code = 422
        monkeypatch.setattr(backends, "_sleep", lambda s: pytest.fail("must not retry on 4xx"))
        b = OpenAICompatibleBackend(self.model(url), environ={"STUB_KEY": "k"})
        with pytest.raises(BackendError) as exc:
            b.complete(req("q", model=self.model(url)))
        assert exc.value.status == 422
        assert len(handler.requests) == 1

    def test_gives_up_after_max_attempts(self, stub_server, monkeypatch):
        url, handler = stub_server
        handler.fail_times = 10
        monkeypatch.setattr(backends, "_sleep", lambda s: None)
        b = OpenAICompatibleBackend(self.model(url), environ={"STUB_KEY": "k"})
        with pytest.raises(BackendError) as exc:
            b.complete(req("q", model=self.model(url)))
        assert exc.value.status == 503
        assert len(handler.requests) == 2

    def test_tool_role_downgraded_to_user(self, stub_server):
        url, handler = stub_server
        b = OpenAICompatibleBackend(self.model(url), environ={"STUB_KEY": "k"})
        b.complete(ChatRequest(model=self.model(url), messages=(
            ChatMessage("system", "sys"),
            ChatMessage("tool", "exit 0"),
        )))
        sent = handler.requests[0]["body"]["messages"]
        assert sent[1]["role"] == "user"
        assert "[tool result]" in sent[1]["content"]


def test_chat_request_requires_messages():
    with pytest.raises(ValueError):
        ChatRequest(model=mock_model(), messages=())
