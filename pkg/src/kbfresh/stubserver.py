"""Local HTTP server exposing a dump through the entity/revisions contract.

Used by the test-suite for source-equivalence checks and handy for trying
the HTTP client without a network::

    server = serve_dump(DumpSource("dump.jsonl"))
    source = HttpSource(server.url)
    ...
    server.shutdown()
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlparse

from .encyc import DumpSource, format_timestamp, parse_timestamp


class _Handler(BaseHTTPRequestHandler):
    source: DumpSource

    def log_message(self, *args):
        pass

    def _send(self, code: int, body) -> None:
        data = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        url = urlparse(self.path)
        parts = [unquote(p) for p in url.path.strip("/").split("/")]
        if len(parts) < 2 or parts[0] != "entity":
            return self._send(404, {"error": "unknown route"})
        name = parts[1]
        ent = self.source.fetch_entity(name)
        if ent is None:
            return self._send(404, {"error": "not found"})
        if len(parts) == 2:
            return self._send(200, ent.to_record())
        if len(parts) == 3 and parts[2] == "revisions":
            qs = parse_qs(url.query)
            start = parse_timestamp(qs["start"][0]) if "start" in qs else None
            end = parse_timestamp(qs["end"][0]) if "end" in qs else None
            stamps = []
            # raw order is kept on purpose: the client must sort
            for raw in self.source.raw_revisions(name):
                t = parse_timestamp(raw)
                if (start is None or t >= start) and (end is None or t <= end):
                    stamps.append({"timestamp": format_timestamp(t)})
            return self._send(200, {"query": {"pages": [
                {"id": ent.id, "title": ent.name, "revisions": stamps}]}})
        return self._send(404, {"error": "unknown route"})


class StubServer(ThreadingHTTPServer):
    daemon_threads = True

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def serve_dump(source: DumpSource, host: str = "127.0.0.1", port: int = 0,
               handler: type[BaseHTTPRequestHandler] | None = None) -> StubServer:
    """Start a background server; call ``shutdown()`` when done."""
    cls = handler or type("DumpHandler", (_Handler,), {"source": source})
    server = StubServer((host, port), cls)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
