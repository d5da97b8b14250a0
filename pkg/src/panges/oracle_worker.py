"""Ground-truth-backed worker process.

Serves one of the four roles over the line-delimited JSON protocol, answering
from a saved dataset's annotations. Noise streams are derived from the same
keys the in-process oracles use — (seed, stream, image, point) for generation,
(seed, stream, image, mask fingerprint) for scoring and classification — so a
pipeline run is bit-identical whether a role runs in-process or behind this
worker.

    python -m panges.oracle_worker --role generator --dataset DIR --seed 7 \
        --noise '{"jitter_sigma": 1.0}'
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import PanopticRecord, load_panoptic
from .mask import rle_encode, decode_counts
from .sources import (
    STREAM_CLASSIFY,
    STREAM_GENERATE,
    STREAM_SCORE,
    Candidate,
    NoiseConfig,
    derive_rng,
    mask_fingerprint,
    oracle_classify,
    oracle_generate,
    oracle_refine,
    oracle_score,
)

_REQUEST_FOR_ROLE = {
    "generator": "generate",
    "evaluator": "score",
    "refiner": "refine",
    "classifier": "classify",
}


def worker_command(role: str, dataset: Path | str, seed: int,
                   noise: NoiseConfig = NoiseConfig(), *,
                   exact_evaluator: bool = False,
                   snap_threshold: float = 0.5) -> tuple[str, ...]:
    """The launch command for a WorkerEndpoint serving ``role``."""
    cmd = [
        sys.executable, "-m", "panges.oracle_worker",
        "--role", role,
        "--dataset", str(dataset),
        "--seed", str(seed),
        "--noise", json.dumps(noise.to_json()),
        "--snap-threshold", str(snap_threshold),
    ]
    if exact_evaluator:
        cmd.append("--exact-evaluator")
    return tuple(cmd)


class _Server:
    def __init__(self, role: str, records: list[PanopticRecord], seed: int,
                 noise: NoiseConfig, exact_evaluator: bool, snap_threshold: float):
        self.role = role
        self.seed = seed
        self.noise = noise
        self.exact_evaluator = exact_evaluator
        self.snap_threshold = snap_threshold
        self.by_name: dict[str, PanopticRecord] = {}
        for rec in records:
            if rec.image_path is not None:
                self.by_name[Path(rec.image_path).name] = rec
        self.categories = sorted(records[0].categories) if records else []

    def _record(self, msg: dict) -> PanopticRecord:
        name = Path(str(msg.get("image", ""))).name
        rec = self.by_name.get(name)
        if rec is None:
            raise ValueError(f"unknown image {msg.get('image')!r}")
        size = msg.get("size")
        if size != [rec.height, rec.width]:
            raise ValueError(f"size {size} does not match image {name} "
                             f"({[rec.height, rec.width]})")
        return rec

    def _mask(self, msg: dict, rec: PanopticRecord, key: str):
        counts = msg.get(key)
        if not isinstance(counts, list):
            raise ValueError(f"request carries no {key} list")
        return decode_counts(rec.width, rec.height, counts)

    def handle(self, msg: dict) -> dict:
        kind = msg.get("type")
        rid = msg.get("id")
        if kind != _REQUEST_FOR_ROLE[self.role]:
            raise ValueError(f"a {self.role} worker cannot handle {kind!r} requests")
        rec = self._record(msg)

        if kind == "generate":
            roi = self._mask(msg, rec, "roi_rle")
            point = msg.get("point")
            if (not isinstance(point, list) or len(point) != 2
                    or not all(isinstance(v, int) for v in point)):
                raise ValueError(f"bad point {point!r}")
            x, y = point
            rng = derive_rng(self.seed, STREAM_GENERATE, rec.image_id, x, y)
            cand = oracle_generate(rec.gt, roi, (x, y), self.noise, rng)
            return {"type": "mask", "id": rid, "rle": list(rle_encode(cand.mask).runs)}

        mask = self._mask(msg, rec, "mask_rle")
        if kind == "score":
            cand = Candidate(mask, (0, 0))
            sigma = 0.0 if self.exact_evaluator else self.noise.score_sigma
            if sigma == 0.0:
                value = oracle_score(cand, rec.gt, exact=True)
            else:
                rng = derive_rng(self.seed, STREAM_SCORE, rec.image_id,
                                 mask_fingerprint(mask))
                value = oracle_score(cand, rec.gt, exact=False, sigma=sigma, rng=rng)
            return {"type": "score", "id": rid, "value": value}

        if kind == "refine":
            cand = oracle_refine(Candidate(mask, (0, 0)), rec.gt, self.snap_threshold)
            return {"type": "mask", "id": rid, "rle": list(rle_encode(cand.mask).runs)}

        # classify
        rng = None
        if self.noise.confusion > 0:
            rng = derive_rng(self.seed, STREAM_CLASSIFY, rec.image_id,
                             mask_fingerprint(mask))
        category = oracle_classify(Candidate(mask, (0, 0)), rec.gt,
                                   self.noise.confusion, rng, self.categories)
        return {"type": "class", "id": rid, "category": int(category)}

    def serve(self, stdin, stdout) -> int:
        def emit(obj: dict) -> None:
            stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
            stdout.flush()

        line = stdin.readline()
        try:
            hello = json.loads(line)
        except json.JSONDecodeError:
            emit({"type": "error", "message": "handshake is not valid JSON"})
            return 1
        if hello.get("type") != "hello":
            emit({"type": "error", "message": f"expected hello, got {hello.get('type')!r}"})
            return 1
        if hello.get("role") != self.role:
            emit({"type": "error",
                  "message": f"serving {self.role}, asked for {hello.get('role')!r}"})
            return 1
        emit({"type": "ready"})

        for line in stdin:
            if not line.strip():
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                emit({"type": "error", "message": "request is not valid JSON"})
                continue
            try:
                emit(self.handle(msg))
            except Exception as exc:  # noqa: BLE001 - report, keep serving
                emit({"type": "error", "id": msg.get("id"), "message": str(exc)})
        return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="panges.oracle_worker",
        description="serve one pipeline role from saved ground truth",
    )
    parser.add_argument("--role", required=True, choices=sorted(_REQUEST_FOR_ROLE))
    parser.add_argument("--dataset", required=True,
                        help="annotation JSON, or a directory containing panoptic.json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise", default="{}",
                        help="JSON object of corruption settings")
    parser.add_argument("--exact-evaluator", action="store_true",
                        help="score with the true IOU regardless of noise settings")
    parser.add_argument("--snap-threshold", type=float, default=0.5)
    args = parser.parse_args(argv)

    path = Path(args.dataset)
    if path.is_dir():
        path = path / "panoptic.json"
    records = load_panoptic(path)
    noise = NoiseConfig.from_json(json.loads(args.noise))
    server = _Server(args.role, records, args.seed, noise,
                     args.exact_evaluator, args.snap_threshold)
    return server.serve(sys.stdin, sys.stdout)


if __name__ == "__main__":
    raise SystemExit(main())
