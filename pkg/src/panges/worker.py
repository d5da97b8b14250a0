"""Client side of the external worker protocol.

A worker is a separate process speaking line-delimited JSON on its standard
streams: one hello/ready handshake, then strictly one request in flight at a
time. Every response is validated here (id echo, canonical RLE, score range)
before anything reaches the pipeline, so a misbehaving worker can never push
a malformed mask or an out-of-range score into a run.
"""
from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
from dataclasses import dataclass

from .errors import ProtocolError, RleError, WorkerError
from .mask import BitMask, Point, decode_counts, rle_encode
from .sources import Candidate, ImageContext

ROLES = ("generator", "evaluator", "refiner", "classifier")
PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class WorkerEndpoint:
    """How to launch and talk to one worker process.

    ``on_failure`` decides what the pipeline-facing wrappers do when the
    process dies, times out, or reports an error: ``"skip"`` drops the
    affected candidate (the run continues), ``"abort"`` raises. Malformed
    responses are never skippable — those always raise ProtocolError.
    """

    role: str
    command: tuple[str, ...]
    version: int = PROTOCOL_VERSION
    timeout: float = 10.0
    on_failure: str = "skip"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown worker role {self.role!r}")
        if not self.command:
            raise ValueError("worker command must not be empty")
        if self.on_failure not in ("skip", "abort"):
            raise ValueError(f"on_failure must be 'skip' or 'abort', got {self.on_failure!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


class WorkerClient:
    """Launches the endpoint's process and runs the request/response cycle."""

    def __init__(self, endpoint: WorkerEndpoint):
        self.endpoint = endpoint
        self._proc = subprocess.Popen(
            list(endpoint.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 0
        try:
            self._handshake()
        except Exception:
            self.close()
            raise

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _send(self, obj: dict) -> None:
        if self._proc.poll() is not None:
            raise WorkerError(
                f"{self.endpoint.role} worker exited with code {self._proc.returncode}"
            )
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(obj, separators=(",", ":")) + "\n")
            self._proc.stdin.flush()
        except OSError as exc:
            raise WorkerError(f"{self.endpoint.role} worker pipe broke: {exc}") from exc

    def _read(self) -> dict:
        try:
            line = self._lines.get(timeout=self.endpoint.timeout)
        except queue.Empty:
            raise WorkerError(
                f"{self.endpoint.role} worker sent nothing for {self.endpoint.timeout}s"
            ) from None
        if line is None:
            raise WorkerError(
                f"{self.endpoint.role} worker closed its output "
                f"(exit code {self._proc.poll()})"
            )
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"worker sent unparseable JSON: {line!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"worker response is not an object: {line!r}")
        return obj

    def _handshake(self) -> None:
        self._send({
            "type": "hello",
            "role": self.endpoint.role,
            "version": self.endpoint.version,
        })
        reply = self._read()
        if reply.get("type") != "ready":
            raise ProtocolError(f"expected a ready message, got {reply!r}")

    def request(self, msg: dict) -> dict:
        """Send one request (id assigned if absent) and validate the reply."""
        msg = dict(msg)
        if "id" not in msg:
            self._next_id += 1
            msg["id"] = self._next_id
        self._send(msg)
        reply = self._read()
        if reply.get("type") == "error":
            raise WorkerError(
                f"{self.endpoint.role} worker error: {reply.get('message', '')}"
            )
        if reply.get("id") != msg["id"]:
            raise ProtocolError(
                f"response id {reply.get('id')!r} does not echo request id {msg['id']}"
            )
        return reply

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> WorkerClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def worker_call(endpoint: WorkerEndpoint, request: dict) -> dict:
    """One-shot call: launch, handshake, send ``request``, tear down."""
    with WorkerClient(endpoint) as client:
        return client.request(request)


# ---------------------------------------------------------------------------
# response validation
# ---------------------------------------------------------------------------

def _expect_mask(reply: dict, width: int, height: int) -> BitMask:
    if reply.get("type") != "mask":
        raise ProtocolError(f"expected a mask response, got type {reply.get('type')!r}")
    counts = reply.get("rle")
    if not isinstance(counts, list):
        raise ProtocolError("mask response carries no rle list")
    try:
        return decode_counts(width, height, counts)
    except (RleError, TypeError, ValueError) as exc:
        raise ProtocolError(f"mask response is not canonical rle: {exc}") from exc


def _expect_score(reply: dict) -> float:
    if reply.get("type") != "score":
        raise ProtocolError(f"expected a score response, got type {reply.get('type')!r}")
    value = reply.get("value")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(f"score value {value!r} is not a number")
    value = float(value)
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise ProtocolError(f"score {value} lies outside [0, 1]")
    return value


def _expect_category(reply: dict) -> int:
    if reply.get("type") != "class":
        raise ProtocolError(f"expected a class response, got type {reply.get('type')!r}")
    category = reply.get("category")
    if isinstance(category, bool) or not isinstance(category, int):
        raise ProtocolError(f"category {category!r} is not an integer")
    return category


# ---------------------------------------------------------------------------
# pipeline-facing role wrappers
# ---------------------------------------------------------------------------

def _image_field(ctx: ImageContext) -> str:
    return str(ctx.image_path) if ctx.image_path is not None else ""


class _WorkerSource:
    def __init__(self, client: WorkerClient):
        self.client = client

    def close(self) -> None:
        self.client.close()

    def _guard(self, call):
        try:
            return call()
        except WorkerError:
            if self.client.endpoint.on_failure == "abort":
                raise
            return None


class WorkerGenerator(_WorkerSource):
    def generate(self, ctx: ImageContext, roi: BitMask, point: Point) -> Candidate | None:
        def call():
            reply = self.client.request({
                "type": "generate",
                "image": _image_field(ctx),
                "size": [ctx.height, ctx.width],
                "roi_rle": list(rle_encode(roi).runs),
                "point": [point[0], point[1]],
            })
            mask = _expect_mask(reply, ctx.width, ctx.height)
            return Candidate(mask & roi, point, source="worker")

        return self._guard(call)


class WorkerEvaluator(_WorkerSource):
    def score(self, ctx: ImageContext, candidate: Candidate,
              object_mask: BitMask | None = None) -> float | None:
        def call():
            reply = self.client.request({
                "type": "score",
                "image": _image_field(ctx),
                "size": [ctx.height, ctx.width],
                "mask_rle": list(rle_encode(candidate.mask).runs),
                "object_rle": (list(rle_encode(object_mask).runs)
                               if object_mask is not None else None),
            })
            return _expect_score(reply)

        return self._guard(call)


class WorkerRefiner(_WorkerSource):
    def refine(self, ctx: ImageContext, candidate: Candidate) -> Candidate | None:
        def call():
            reply = self.client.request({
                "type": "refine",
                "image": _image_field(ctx),
                "size": [ctx.height, ctx.width],
                "mask_rle": list(rle_encode(candidate.mask).runs),
            })
            mask = _expect_mask(reply, ctx.width, ctx.height)
            return Candidate(mask, candidate.point, candidate.source,
                             candidate.score, candidate.category)

        return self._guard(call)


class WorkerClassifier(_WorkerSource):
    def classify(self, ctx: ImageContext, candidate: Candidate) -> int | None:
        def call():
            reply = self.client.request({
                "type": "classify",
                "image": _image_field(ctx),
                "size": [ctx.height, ctx.width],
                "mask_rle": list(rle_encode(candidate.mask).runs),
            })
            return _expect_category(reply)

        return self._guard(call)


_ROLE_WRAPPERS = {
    "generator": WorkerGenerator,
    "evaluator": WorkerEvaluator,
    "refiner": WorkerRefiner,
    "classifier": WorkerClassifier,
}


def open_worker_source(endpoint: WorkerEndpoint):
    """Launch the endpoint and wrap it in its pipeline-facing role object."""
    return _ROLE_WRAPPERS[endpoint.role](WorkerClient(endpoint))
