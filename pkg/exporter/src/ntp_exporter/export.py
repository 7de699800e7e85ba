"""Trace export: per-position next-token probabilities for an observed sequence.

The output is the line-oriented NTP trace format: a header line
``{"version": 1, "V": V, "truncated": bool}`` followed by one JSON object per
position, ``{"i", "y", "p"}`` for full vectors or ``{"i", "y", "ids", "p", "r"}``
for a top-K truncation with residual mass ``r``.  Floats go through
``json.dumps``, which serializes shortest round-trip decimals, so a full-vector
trace reproduces the probabilities bit for bit.
"""

import json
from dataclasses import dataclass

import numpy as np

from .models import load_model

__all__ = ["ExportJob", "export_trace"]


@dataclass
class ExportJob:
    model_id: str
    tokens: np.ndarray
    top_k: int = 0          # 0 = full vector
    out_path: str = "trace.ntp"

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.top_k < 0:
            raise ValueError("top_k must be 0 (full) or >= 1")


def _record(i: int, y: int, probs: np.ndarray, top_k: int) -> dict:
    if top_k == 0 or top_k >= len(probs):
        return {"i": i, "y": y, "p": [float(x) for x in probs]}
    # keep the K most probable ids, forcing the realized token in so the
    # record stays self-contained for detection
    order = np.argsort(-probs, kind="stable")[:top_k]
    if y - 1 not in order:
        order[-1] = y - 1
    order = np.sort(order)
    kept = probs[order]
    return {"i": i, "y": y, "ids": [int(k) + 1 for k in order],
            "p": [float(x) for x in kept], "r": float(1.0 - kept.sum())}


def export_trace(job: ExportJob) -> None:
    model = load_model(job.model_id)
    if np.any((job.tokens < 1) | (job.tokens > model.V)):
        bad = job.tokens[(job.tokens < 1) | (job.tokens > model.V)][0]
        raise ValueError(f"token id {bad} out of range for V={model.V}")
    truncated = 0 < job.top_k < model.V and len(job.tokens) > 0
    with open(job.out_path, "w") as fh:
        fh.write(json.dumps({"version": 1, "V": model.V, "truncated": bool(truncated)}) + "\n")
        for i, y in enumerate(job.tokens, start=1):
            probs = model.next_probs(job.tokens[:i - 1])
            fh.write(json.dumps(_record(i, int(y), probs, job.top_k)) + "\n")
