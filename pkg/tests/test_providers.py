import http.server
import json
import threading
import time

import numpy as np
import pytest

from objmimic.errors import ProviderError
from objmimic.plan import ProviderContext
from objmimic.providers import (
    PROVIDER_URL_ENV,
    HttpProvider,
    NullProvider,
    RuleBasedProvider,
    extract_json,
    make_provider,
)


def make_context(target="bottle", candidates=("bowl",), displacement=0.3,
                 end=(0.4, 0.1, 0.1), candidate_pos=None):
    candidate_pos = candidate_pos or {name: np.array([0.4, 0.1, 0.0]) for name in candidates}
    return ProviderContext(
        step_index=1,
        frame_range=(100, 200),
        target=target,
        candidates=tuple(candidates),
        target_displacement=displacement,
        target_end_position=np.asarray(end, dtype=float),
        candidate_end_positions=candidate_pos,
    )


def test_rule_provider_pour_recipient():
    assert RuleBasedProvider().query_reference(make_context()) == "bowl"


def test_rule_provider_static_target_declines():
    ctx = make_context(displacement=0.01)
    assert RuleBasedProvider().query_reference(ctx) is None


def test_rule_provider_no_container_names():
    ctx = make_context(candidates=("hammer",), candidate_pos={"hammer": np.array([0.4, 0.1, 0])})
    assert RuleBasedProvider().query_reference(ctx) is None


def test_rule_provider_too_far_horizontally():
    ctx = make_context(candidate_pos={"bowl": np.array([0.9, 0.9, 0.0])})
    assert RuleBasedProvider().query_reference(ctx) is None


def test_rule_provider_nearest_container_wins():
    ctx = make_context(
        candidates=("near bowl", "far bowl"),
        candidate_pos={
            "near bowl": np.array([0.41, 0.1, 0.0]),
            "far bowl": np.array([0.45, 0.15, 0.0]),
        },
    )
    assert RuleBasedProvider().query_reference(ctx) == "near bowl"


def test_null_provider():
    assert NullProvider().query_reference(make_context()) is None


def test_extract_json_plain_and_fenced():
    assert extract_json('{"a": 1}') == {"a": 1}
    fenced = 'The answer is:\n```json\n{"reference_object_name": "bowl"}\n```\nthanks'
    assert extract_json(fenced) == {"reference_object_name": "bowl"}
    with pytest.raises(ProviderError):
        extract_json("not json at all")
    with pytest.raises(ProviderError):
        extract_json("[1, 2]")


class _StubHandler(http.server.BaseHTTPRequestHandler):
    responses = {}
    delay = 0.0
    requests = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        _StubHandler.requests.append(payload)
        if _StubHandler.delay:
            time.sleep(_StubHandler.delay)
        body = _StubHandler.responses.get(payload.get("query"), "{}")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body.encode("utf-8"))

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = http.server.HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.responses = {}
    _StubHandler.delay = 0.0
    _StubHandler.requests = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_http_provider_reference_shape(stub_server):
    _StubHandler.responses["reference_object"] = '{"reference_object_name": "bowl"}'
    provider = HttpProvider(url=stub_server, timeout=5.0)
    assert provider.query_reference(make_context()) == "bowl"
    sent = _StubHandler.requests[-1]
    assert sent["target"] == "bottle"
    assert sent["objects"] == ["bowl"]


def test_http_provider_reference_none(stub_server):
    _StubHandler.responses["reference_object"] = '{"reference_object_name": "None"}'
    provider = HttpProvider(url=stub_server, timeout=5.0)
    assert provider.query_reference(make_context()) is None


def test_http_provider_fenced_response(stub_server):
    _StubHandler.responses["reference_object"] = (
        '```json\n{"reference_object_name": "bowl"}\n```'
    )
    provider = HttpProvider(url=stub_server, timeout=5.0)
    assert provider.query_reference(make_context()) == "bowl"


def test_http_provider_target_shape(stub_server):
    _StubHandler.responses["manipulate_object"] = '{"manipulate_object_name": "snack"}'
    provider = HttpProvider(url=stub_server, timeout=5.0)
    assert provider.query_target(["snack", "plate"]) == "snack"


def test_http_provider_missing_key(stub_server):
    _StubHandler.responses["reference_object"] = '{"color": "red"}'
    provider = HttpProvider(url=stub_server, timeout=5.0)
    with pytest.raises(ProviderError, match="reference_object_name"):
        provider.query_reference(make_context())


def test_http_provider_timeout(stub_server):
    _StubHandler.responses["reference_object"] = '{"reference_object_name": "bowl"}'
    _StubHandler.delay = 1.0
    provider = HttpProvider(url=stub_server, timeout=0.2)
    with pytest.raises(ProviderError):
        provider.query_reference(make_context())


def test_http_provider_connection_refused():
    provider = HttpProvider(url="http://127.0.0.1:1", timeout=0.5)
    with pytest.raises(ProviderError):
        provider.query_reference(make_context())


def test_make_provider_kinds(monkeypatch):
    assert isinstance(make_provider("rules"), RuleBasedProvider)
    assert isinstance(make_provider("none"), NullProvider)
    monkeypatch.delenv(PROVIDER_URL_ENV, raising=False)
    with pytest.raises(ProviderError, match=PROVIDER_URL_ENV):
        make_provider("http")
    monkeypatch.setenv(PROVIDER_URL_ENV, "http://example.invalid")
    provider = make_provider("http", timeout=3.0)
    assert isinstance(provider, HttpProvider)
    assert provider.timeout == 3.0
    with pytest.raises(ProviderError):
        make_provider("telepathy")
