"""Newline-delimited JSON-RPC 2.0 tool server and clients (tools/list + tools/call)."""

from __future__ import annotations

import json
import logging
import os
import signal
import socketserver
import subprocess
import sys
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import jsonschema

log = logging.getLogger(__name__)

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603
APPLICATION_ERROR = -32000

PROTOCOL_VERSION = "sage-forge/1"
PORT_ENV = "SAGE_FORGE_PORT"


class DuplicateName(ValueError):
    pass


class BindFailure(OSError):
    pass


class ToolError(Exception):
    """Application-level failure raised by a tool handler; surfaces in the JSON-RPC error data."""

    def __init__(self, kind: str, message: str = "", **data):
        super().__init__(message or kind)
        self.kind = kind
        self.data = data

    def to_data(self) -> dict:
        return {"type": self.kind, "message": str(self), **self.data}


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    input_schema: dict = field(default_factory=lambda: {"type": "object"})
    output_schema: dict = field(default_factory=lambda: {"type": "object"})

    def __post_init__(self):
        jsonschema.Draft7Validator.check_schema(self.input_schema)
        jsonschema.Draft7Validator.check_schema(self.output_schema)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "inputSchema": self.input_schema,
            "outputSchema": self.output_schema,
        }


@dataclass
class SessionState:
    session_id: str
    scene: Any = None
    iteration: int = 0
    log: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


Handler = Callable[[SessionState, dict], dict]


class ToolServer:
    def __init__(self, name: str = "sage-forge", session_factory: Callable[[str], SessionState] | None = None):
        self.name = name
        self._tools: dict[str, tuple[ToolDescriptor, Handler]] = {}
        self._session_factory = session_factory or (lambda sid: SessionState(sid))
        self._sessions: dict[str, SessionState] = {}
        self._lock = threading.Lock()

    # registry -----------------------------------------------------------
    def register_tool(self, descriptor: ToolDescriptor, handler: Handler) -> None:
        if descriptor.name in self._tools:
            raise DuplicateName(descriptor.name)
        self._tools[descriptor.name] = (descriptor, handler)

    def list_tools(self) -> list[dict]:
        return [d.to_dict() for d, _ in self._tools.values()]

    def session(self, session_id: str = "default") -> SessionState:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = self._session_factory(session_id)
            return self._sessions[session_id]

    # dispatch -----------------------------------------------------------
    def call_tool(self, name: str, arguments: dict | None = None, session_id: str = "default") -> dict:
        if name not in self._tools:
            raise KeyError(name)
        desc, handler = self._tools[name]
        args = {} if arguments is None else arguments
        if not isinstance(args, dict):
            raise InvalidParams("arguments must be an object")
        try:
            jsonschema.validate(args, desc.input_schema)
        except jsonschema.ValidationError as exc:
            raise InvalidParams(exc.message) from exc
        sess = self.session(session_id)
        with sess.lock:  # tool calls are serialized per session
            result = handler(sess, args)
            sess.iteration += 1
            sess.log.append({"tool": name, "arguments": args})
        return result

    def handle_request(self, raw: bytes | str, session_id: str = "default") -> bytes:
        """One JSON-RPC request frame in, one response frame out (no trailing newline)."""
        return json.dumps(self._handle(raw, session_id), sort_keys=True, separators=(",", ":")).encode("utf-8")

    def _handle(self, raw, session_id):
        try:
            req = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            return _error(None, PARSE_ERROR, f"parse error: {exc}")
        if not isinstance(req, dict) or req.get("jsonrpc") != "2.0" or not isinstance(req.get("method"), str):
            return _error(req.get("id") if isinstance(req, dict) else None, INVALID_REQUEST, "invalid request")
        rid = req.get("id")
        method = req["method"]
        params = req.get("params", {})
        try:
            if method == "initialize":
                return _result(rid, {"protocolVersion": PROTOCOL_VERSION, "serverInfo": {"name": self.name},
                                     "capabilities": {"tools": {}}})
            if method in ("tools/list", "list_tools"):
                return _result(rid, {"tools": self.list_tools()})
            if method in ("tools/call", "call_tool"):
                if not isinstance(params, dict) or not isinstance(params.get("name"), str):
                    return _error(rid, INVALID_PARAMS, "tools/call needs a tool name")
                if params["name"] not in self._tools:
                    return _error(rid, METHOD_NOT_FOUND, f"unknown tool {params['name']!r}")
                return _result(rid, self.call_tool(params["name"], params.get("arguments", {}), session_id))
            if method == "shutdown":
                return _result(rid, {"ok": True})
            return _error(rid, METHOD_NOT_FOUND, f"method not found: {method}")
        except InvalidParams as exc:
            return _error(rid, INVALID_PARAMS, f"invalid params: {exc}")
        except ToolError as exc:
            return _error(rid, APPLICATION_ERROR, str(exc), exc.to_data())
        except Exception as exc:  # noqa: BLE001 - reported to the client, not swallowed
            log.exception("tool failure")
            return _error(rid, INTERNAL_ERROR, f"{type(exc).__name__}: {exc}")


def _result(rid, result):
    return {"jsonrpc": "2.0", "id": rid, "result": result}


def _error(rid, code, message, data=None):
    err = {"code": code, "message": message}
    if data is not None:
        err["data"] = data
    return {"jsonrpc": "2.0", "id": rid, "error": err}


# ---------------------------------------------------------------------------
# Serving


@dataclass
class ServerConfig:
    transport: str = "stdio"  # or "tcp"
    host: str = "127.0.0.1"
    port: int | None = None
    log_path: str | None = None


def _flush_log(server: ToolServer, path: str | None) -> None:
    if not path:
        return
    with open(path, "w", encoding="utf-8") as f:
        for sid in sorted(server._sessions):
            for entry in server._sessions[sid].log:
                f.write(json.dumps({"session": sid, **entry}, sort_keys=True) + "\n")


def serve_stdio(server: ToolServer, stdin=None, stdout=None, log_path: str | None = None) -> int:
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    stop = {"flag": False}

    def _on_signal(signum, frame):
        _flush_log(server, log_path)
        raise SystemExit(0)

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, _on_signal)
        signal.signal(signal.SIGINT, _on_signal)
    for line in iter(stdin.readline, b""):
        if not line.strip():
            continue
        resp = server.handle_request(line)
        stdout.write(resp + b"\n")
        stdout.flush()
        try:
            if json.loads(line).get("method") == "shutdown":
                stop["flag"] = True
        except (ValueError, AttributeError):
            pass
        if stop["flag"]:
            break
    _flush_log(server, log_path)
    return 0


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        sid = f"conn-{self.client_address[1]}"
        for line in iter(self.rfile.readline, b""):
            if not line.strip():
                continue
            self.wfile.write(self.server.tool_server.handle_request(line, sid) + b"\n")
            self.wfile.flush()


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = False
    daemon_threads = True


def make_tcp_server(server: ToolServer, host: str, port: int) -> _TcpServer:
    try:
        srv = _TcpServer((host, port), _Handler)
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
    srv.tool_server = server
    return srv


def run_server(server: ToolServer, config: ServerConfig) -> int:
    """Serve until EOF, shutdown request or signal; returns the process exit code."""
    if config.transport == "stdio":
        return serve_stdio(server, log_path=config.log_path)
    port = config.port if config.port is not None else int(os.environ.get(PORT_ENV, "8765"))
    tcp = make_tcp_server(server, config.host, port)

    def _on_signal(signum, frame):
        threading.Thread(target=tcp.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _on_signal)
    signal.signal(signal.SIGINT, _on_signal)
    try:
        tcp.serve_forever()
    finally:
        tcp.server_close()
        _flush_log(server, config.log_path)
    return 0


# ---------------------------------------------------------------------------
# Clients


class ToolCallError(RuntimeError):
    def __init__(self, code: int, message: str, data: dict | None = None):
        super().__init__(message)
        self.code = code
        self.data = data or {}

    @property
    def kind(self) -> str:
        return self.data.get("type", "")


class InProcessClient:
    """Calls the server's dispatcher directly, through the same JSON encoding as the wire."""

    def __init__(self, server: ToolServer):
        self.server = server
        self._next = 0

    def request(self, method: str, params: dict | None = None) -> Any:
        self._next += 1
        frame = json.dumps({"jsonrpc": "2.0", "id": self._next, "method": method, "params": params or {}})
        return _unwrap(json.loads(self.server.handle_request(frame)))

    def call(self, name: str, arguments: dict | None = None) -> Any:
        return self.request("tools/call", {"name": name, "arguments": arguments or {}})

    def close(self):
        pass


class StdioClient:
    """Spawns ``python -m sage_forge serve`` and talks to it over pipes."""

    def __init__(self, argv: list[str] | None = None, env: dict | None = None):
        argv = argv or [sys.executable, "-m", "sage_forge", "serve", "--transport", "stdio"]
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, env=env)
        self._next = 0
        self.request("initialize")

    def request(self, method: str, params: dict | None = None) -> Any:
        self._next += 1
        frame = json.dumps({"jsonrpc": "2.0", "id": self._next, "method": method, "params": params or {}})
        self.proc.stdin.write(frame.encode("utf-8") + b"\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise ToolCallError(INTERNAL_ERROR, "server closed the connection")
        resp = json.loads(line)
        if resp.get("id") != self._next:
            raise ToolCallError(INTERNAL_ERROR, f"response id mismatch: {resp.get('id')} != {self._next}")
        return _unwrap(resp)

    def call(self, name: str, arguments: dict | None = None) -> Any:
        return self.request("tools/call", {"name": name, "arguments": arguments or {}})

    def close(self) -> int:
        if self.proc.poll() is None:
            try:
                self.request("shutdown")
            except (ToolCallError, BrokenPipeError, OSError):
                pass
            self.proc.stdin.close()
            self.proc.wait(timeout=30)
        self.proc.stdout.close()
        return self.proc.returncode

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _unwrap(resp: dict) -> Any:
    if "error" in resp:
        e = resp["error"]
        raise ToolCallError(e["code"], e["message"], e.get("data"))
    return resp["result"]
