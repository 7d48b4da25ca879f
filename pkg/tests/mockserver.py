"""Scripted HTTP server standing in for resolver and publisher hosts."""
from __future__ import annotations

import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class MockWeb:
    """Routes are keyed by (Host header without port, request path).

    A route is a list of (status, location) replies; each request consumes the
    next reply and the last one repeats.  Unknown routes answer 404.
    """

    def __init__(self):
        self.routes: dict[tuple[str, str], list[tuple[int, str | None]]] = {}
        self.log: list[tuple[float, str, str, str]] = []
        self._hits: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        self._server = None

    def route(self, host: str, path: str, *replies: tuple[int, str | None]) -> None:
        self.routes[(host, path)] = list(replies)

    def redirect(self, host: str, path: str, location: str, status: int = 302) -> None:
        self.route(host, path, (status, location))

    def ok(self, host: str, path: str) -> None:
        self.route(host, path, (200, None))

    def _reply(self, method: str, host: str, path: str) -> tuple[int, str | None]:
        with self._lock:
            self.log.append((time.monotonic(), method, host, path))
            replies = self.routes.get((host, path))
            if not replies:
                return 404, None
            n = self._hits.get((host, path), 0)
            self._hits[(host, path)] = n + 1
            return replies[min(n, len(replies) - 1)]

    def requests_for(self, host: str) -> list[float]:
        return [t for t, _, h, _ in self.log if h == host]

    def start(self) -> "MockWeb":
        web = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def _serve(self):
                host = (self.headers.get("Host") or "").split(":")[0].lower()
                status, location = web._reply(self.command, host, self.path)
                self.send_response(status)
                if location is not None:
                    self.send_header("Location", location)
                self.send_header("Content-Length", "0")
                self.end_headers()

            do_HEAD = _serve
            do_GET = _serve

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._server.daemon_threads = True
        threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True).start()
        return self

    @property
    def base(self) -> str:
        return f"http://127.0.0.1:{self._server.server_address[1]}"

    def host_map(self, *hosts: str) -> dict[str, str]:
        return {h: self.base for h in hosts}

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
