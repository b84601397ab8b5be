"""HTTP service exposing the fusion reader behind the reader wire protocol.

Endpoints:
  GET  /v1/handshake -> {"model_name", "model_version", "supports_attention"}
  POST /v1/answer    -> {"request_id", "answer", "attention"?}

Requests are serialized through a model lock, so replies pair with their
requests; clients must not assume any ordering across requests.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .fusion import FusionReader, ShimConfig


class ShimServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, reader: FusionReader, config: ShimConfig):
        super().__init__(address, _Handler)
        self.reader = reader
        self.config = config
        self.model_lock = threading.Lock()


class _Handler(BaseHTTPRequestHandler):
    server: ShimServer

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: dict) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path != "/v1/handshake":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        reader = self.server.reader
        self._send(200, {
            "model_name": reader.model_name,
            "model_version": reader.model_version,
            "supports_attention": True,
        })

    def do_POST(self):
        if self.path != "/v1/answer":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            request = json.loads(self.rfile.read(length))
        except (ValueError, json.JSONDecodeError) as e:
            self._send(400, {"error": f"malformed JSON body: {e}"})
            return

        problem = self._validate(request)
        if problem is not None:
            field, message = problem
            self._send(400, {"error": message, "field": field})
            return
        passages = request["passages"]
        if len(passages) > self.server.config.max_passages:
            self._send(413, {
                "error": f"{len(passages)} passages exceed the configured "
                         f"limit of {self.server.config.max_passages}"
            })
            return

        want_attention = bool(request.get("want_attention", False))
        with self.server.model_lock:
            answer, attention = self.server.reader.answer(
                request["question"], passages, want_attention=want_attention
            )
        body = {"request_id": request.get("request_id", ""), "answer": answer}
        if attention is not None:
            body["attention"] = attention
        self._send(200, body)

    @staticmethod
    def _validate(request) -> tuple[str, str] | None:
        if not isinstance(request, dict):
            return "<body>", "request body must be a JSON object"
        question = request.get("question")
        if not isinstance(question, str) or not question:
            return "question", "question must be a non-empty string"
        passages = request.get("passages")
        if not isinstance(passages, list) or not passages:
            return "passages", "passages must be a non-empty list"
        for i, p in enumerate(passages):
            if not isinstance(p, dict) or not isinstance(p.get("title"), str) \
                    or not isinstance(p.get("text"), str):
                return f"passages[{i}]", "each passage needs string title and text"
        return None


def create_server(config: ShimConfig, host: str = "127.0.0.1", port: int = 0) -> ShimServer:
    reader = FusionReader(config)
    return ShimServer((host, port), reader, config)


def serve(config: ShimConfig, host: str = "127.0.0.1", port: int = 8710) -> None:
    server = create_server(config, host, port)
    print(f"serving {server.reader.model_name} ({server.reader.model_version}) "
          f"on {host}:{server.server_address[1]}")
    server.serve_forever()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="reader-shim",
                                     description="HTTP reader service over a seq2seq checkpoint")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8710)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-passages", type=int, default=100)
    parser.add_argument("--max-new-tokens", type=int, default=16)
    args = parser.parse_args(argv)

    if args.config:
        config = ShimConfig.from_file(args.config)
        config.checkpoint = args.checkpoint
    else:
        config = ShimConfig(checkpoint=args.checkpoint, device=args.device,
                            max_passages=args.max_passages,
                            max_new_tokens=args.max_new_tokens)
    serve(config, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
