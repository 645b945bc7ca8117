import io
import json
import socket

import pytest

from sage_forge.protocol import (
    INVALID_PARAMS,
    METHOD_NOT_FOUND,
    PARSE_ERROR,
    BindFailure,
    DuplicateName,
    InProcessClient,
    ToolCallError,
    ToolDescriptor,
    ToolServer,
    make_tcp_server,
    serve_stdio,
)
from sage_forge.tools import build_server

ECHO = ToolDescriptor("echo", "Echo a word.", {"type": "object", "required": ["word"],
                                                "properties": {"word": {"type": "string"}}})


def _echo_server():
    calls = []
    srv = ToolServer()
    srv.register_tool(ECHO, lambda sess, args: calls.append(args) or {"word": args["word"]})
    return srv, calls


def _frame(method, params=None, rid=1):
    return json.dumps({"jsonrpc": "2.0", "id": rid, "method": method, "params": params or {}})


def test_register_and_call():
    srv, calls = _echo_server()
    assert [t["name"] for t in srv.list_tools()] == ["echo"]
    assert InProcessClient(srv).call("echo", {"word": "hi"}) == {"word": "hi"}
    assert calls == [{"word": "hi"}]
    assert srv.session().iteration == 1 and srv.session().log == [{"tool": "echo", "arguments": {"word": "hi"}}]


def test_duplicate_name():
    srv, _ = _echo_server()
    with pytest.raises(DuplicateName):
        srv.register_tool(ECHO, lambda s, a: {})


def test_descriptor_schema_must_be_valid():
    with pytest.raises(Exception):
        ToolDescriptor("bad", "", {"type": 12})


def test_list_tools_names_the_generators_and_critics():
    names = {t["name"] for t in json.loads(build_server().handle_request(_frame("tools/list")))["result"]["tools"]}
    assert {"scene_init", "asset_place", "asset_move", "asset_remove", "visual_critic", "physics_critic"} <= names


@pytest.mark.parametrize("raw,code", [
    (b"{not json", PARSE_ERROR),
    (_frame("frobnicate"), METHOD_NOT_FOUND),
    (_frame("tools/call", {"name": "nope"}), METHOD_NOT_FOUND),
    (_frame("tools/call", {"name": "echo", "arguments": {"word": 3}}), INVALID_PARAMS),
    (_frame("tools/call", {"name": "echo", "arguments": {}}), INVALID_PARAMS),
])
def test_error_codes(raw, code):
    srv, calls = _echo_server()
    resp = json.loads(srv.handle_request(raw))
    assert resp["jsonrpc"] == "2.0" and resp["error"]["code"] == code
    assert resp["id"] == (None if code == PARSE_ERROR else 1)
    assert calls == []


def test_id_is_echoed():
    srv, _ = _echo_server()
    for rid in (7, "abc", None):
        assert json.loads(srv.handle_request(_frame("tools/list", rid=rid)))["id"] == rid


def test_application_error_in_data_field():
    client = InProcessClient(build_server())
    with pytest.raises(ToolCallError) as err:
        client.call("asset_remove", {"targets": ["bed"]})
    assert err.value.kind == "NoScene"


def test_occupied_port_is_bind_failure():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    sock.listen(1)
    try:
        with pytest.raises(BindFailure):
            make_tcp_server(ToolServer(), "127.0.0.1", sock.getsockname()[1])
    finally:
        sock.close()


def test_stdio_session_flushes_log_on_shutdown(tmp_path):
    srv, _ = _echo_server()
    frames = [_frame("initialize", rid=1), _frame("tools/call", {"name": "echo", "arguments": {"word": "a"}}, 2),
              _frame("shutdown", rid=3), _frame("tools/list", rid=4)]
    out = io.BytesIO()
    log = tmp_path / "session.jsonl"
    code = serve_stdio(srv, io.BytesIO(("\n".join(frames) + "\n").encode()), out, str(log))
    assert code == 0
    replies = [json.loads(x) for x in out.getvalue().splitlines()]
    assert [r["id"] for r in replies] == [1, 2, 3]  # nothing is served after shutdown
    assert json.loads(log.read_text()) == {"session": "default", "tool": "echo", "arguments": {"word": "a"}}


def test_tcp_round_trip():
    import threading

    srv, _ = _echo_server()
    tcp = make_tcp_server(srv, "127.0.0.1", 0)
    t = threading.Thread(target=tcp.serve_forever, daemon=True)
    t.start()
    try:
        with socket.create_connection(tcp.server_address) as c:
            f = c.makefile("rwb")
            f.write(_frame("tools/call", {"name": "echo", "arguments": {"word": "x"}}).encode() + b"\n")
            f.flush()
            assert json.loads(f.readline())["result"] == {"word": "x"}
    finally:
        tcp.shutdown()
        tcp.server_close()
