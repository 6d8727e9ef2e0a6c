"""Thin HTTP front for a hub: JSON in, JSON out, no framework.

Routes:
    POST /requests          {"capability": ..., "user": ..., "tick"?: int}
    POST /queries           query document (select/where/filters/graphs)
    GET  /objects           registered object overview
    GET  /objects/{iri}     one object's description and recent readings
    GET  /services          microservice descriptors
    GET  /report            the full scenario report

The server binds a running `Hub`; it never drives the tick loop itself.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote

from .errors import HubError
from .hub import Hub


class _Handler(BaseHTTPRequestHandler):
    hub: Hub  # bound per-server via a subclass attribute

    # keep test output quiet
    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    def _send(self, code: int, doc) -> None:
        body = json.dumps(doc, sort_keys=True).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        doc = json.loads(raw.decode("utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("request body must be a JSON object")
        return doc

    def do_GET(self):  # noqa: N802 - stdlib naming
        path = unquote(self.path)
        if path == "/report":
            return self._send(200, self.hub.report())
        if path == "/objects":
            return self._send(200, self.hub.objects_overview())
        if path.startswith("/objects/"):
            iri = path[len("/objects/"):]
            detail = self.hub.object_detail(iri)
            if detail is None:
                return self._send(404, {"error": f"unknown object {iri}"})
            return self._send(200, detail)
        if path == "/services":
            return self._send(200, self.hub.services_overview())
        self._send(404, {"error": f"no route {path}"})

    def do_POST(self):  # noqa: N802 - stdlib naming
        try:
            doc = self._read_body()
        except (ValueError, json.JSONDecodeError) as exc:
            return self._send(400, {"error": str(exc)})
        if self.path == "/requests":
            capability = doc.get("capability")
            user = doc.get("user")
            if not capability or not user:
                return self._send(400, {"error": "capability and user are required"})
            tick = doc.get("tick")
            record = self.hub.submit_request(
                str(capability), str(user), int(tick) if tick is not None else None
            )
            return self._send(200, record)
        if self.path == "/queries":
            try:
                return self._send(200, self.hub.run_query(doc))
            except (HubError, KeyError, ValueError) as exc:
                return self._send(400, {"error": str(exc)})
        self._send(404, {"error": f"no route {self.path}"})


class GatewayServer:
    """Serves one hub on a background thread; port 0 picks a free port."""

    def __init__(self, hub: Hub, host: str = "127.0.0.1", port: int = 0):
        handler = type("_BoundHandler", (_Handler,), {"hub": hub})
        self._server = ThreadingHTTPServer((host, port), handler)
        self._server.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="hub-gateway", daemon=True
        )
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)
            self._thread = None
