"""Minimal HTTP server exposing mock models over the gateway wire protocol.

Serves /v1/completions, /v1/score and /v1/tokenize backed by a MockGateway,
so the HTTP client path can be exercised end to end without any real
inference backend. Runnable standalone for manual poking:

    python -m seqdistill.mock_server --port 8100
"""

from __future__ import annotations

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .gateway import CapabilityError, GenerationRequest, ScoringRequest
from .mockmodel import MockGateway, MockModelError


class MockModelHandler(BaseHTTPRequestHandler):
    gateway: MockGateway  # set by make_server

    def log_message(self, fmt, *args):  # noqa: A002 - silence default logging
        pass

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):  # noqa: N802 - http.server API
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, json.JSONDecodeError):
            self._reply(400, {"error": "invalid JSON body"})
            return
        try:
            if self.path == "/v1/completions":
                self._completions(body)
            elif self.path == "/v1/score":
                self._score(body)
            elif self.path == "/v1/tokenize":
                self._tokenize(body)
            else:
                self._reply(404, {"error": f"unknown endpoint {self.path}"})
        except CapabilityError as exc:
            self._reply(404, {"error": str(exc)})
        except (MockModelError, KeyError, TypeError, ValueError) as exc:
            self._reply(400, {"error": str(exc)})

    def _completions(self, body: dict) -> None:
        req = GenerationRequest(
            model_id=body["model"],
            prompt=body["prompt"],
            temperature=float(body.get("temperature", 1.0)),
            top_p=float(body.get("top_p", 1.0)),
            max_tokens=int(body["max_tokens"]),
            n=int(body.get("n", 1)),
            seed=body.get("seed"),
        )
        records = self.gateway.sample(req)
        emit_logprobs = bool(body.get("logprobs", False))
        choices = []
        for record in records:
            tokens = None
            if emit_logprobs:
                tokens = [t.to_dict() for t in record.tokens or []]
            choices.append(
                {"text": record.text, "finish_reason": record.finish_reason, "tokens": tokens}
            )
        self._reply(200, {"model": req.model_id, "choices": choices})

    def _score(self, body: dict) -> None:
        req = ScoringRequest(
            model_id=body["model"], prompt=body.get("prompt", ""), completion=body["completion"]
        )
        spans = self.gateway.score(req)
        tokens = [t.to_dict() for t in spans] if body.get("logprobs", False) else None
        self._reply(200, {"model": req.model_id, "tokens": tokens})

    def _tokenize(self, body: dict) -> None:
        count = self.gateway.count_tokens(body["model"], body["text"])
        self._reply(200, {"model": body["model"], "count": count})


def make_server(gateway: MockGateway, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundMockModelHandler", (MockModelHandler,), {"gateway": gateway})
    return ThreadingHTTPServer((host, port), handler)


def serve_background(gateway: MockGateway, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a daemon thread; returns (server, base_url)."""
    server = make_server(gateway, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://{server.server_address[0]}:{server.server_address[1]}"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve the built-in mock models over HTTP.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    args = parser.parse_args(argv)

    from .config import PipelineConfig, build_mock_models

    gateway = MockGateway(build_mock_models(PipelineConfig()))
    server = make_server(gateway, args.host, args.port)
    print(f"serving mock models {sorted(gateway.models)} on http://{args.host}:{args.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
