"""Next-token-probability sources: a seeded synthetic Markov LM and trace-file-backed sources.

Token ids are 1-based, living in ``{1, ..., V}``.  A distribution source maps a
context (the tokens observed so far, possibly empty) to the probability vector
of the next token.  Sources are deterministic: the same context always yields
the same vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MarkovLM",
    "TraceSource",
    "NTPTraceRecord",
    "validate_prob_vector",
    "write_trace",
    "read_trace",
    "TraceFormatError",
]

_PROB_SUM_TOL = 1e-9
_TRUNC_MASS_TOL = 1e-6


class TraceFormatError(ValueError):
    """Raised when a trace file violates the trace format contract."""


def validate_prob_vector(p: np.ndarray, V: int) -> np.ndarray:
    """Check that ``p`` is a length-V probability vector and return it as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (V,):
        raise ValueError(f"probability vector has shape {p.shape}, expected ({V},)")
    if np.any(p < 0):
        raise ValueError("probability vector has negative entries")
    s = p.sum()
    if abs(s - 1.0) > _PROB_SUM_TOL:
        raise ValueError(f"probability vector sums to {s!r}, not 1")
    return p


def _check_context(context, V: int) -> tuple[int, ...]:
    ctx = tuple(int(t) for t in context)
    for t in ctx:
        if not 1 <= t <= V:
            raise ValueError(f"token id {t} outside [1, {V}]")
    return ctx


class MarkovLM:
    """Synthetic order-``order`` Markov language model with Dirichlet rows.

    Each context row is an independent Dirichlet(alpha) draw, rescaled in log
    space by ``temperature`` (small temperatures sharpen rows towards one-hot).
    Rows are derived lazily from ``(seed, context)`` with counter-based
    sub-seeding, so regeneration is bit-exact and independent of query order.

    Parameters
    ----------
    V : int
        Vocabulary size, at least 2.
    order : int
        Markov order (context length), 1 or 2.
    temperature : float
        Positive logit rescaling; 1.0 leaves the Dirichlet rows untouched.
    seed : int
        Master seed for the transition table.
    alpha : float
        Symmetric Dirichlet concentration for the base rows.
    """

    def __init__(self, V: int, order: int = 1, temperature: float = 1.0,
                 seed: int = 0, alpha: float = 0.5):
        if V < 2:
            raise ValueError("V must be at least 2")
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.V = int(V)
        self.order = int(order)
        self.temperature = float(temperature)
        self.seed = int(seed)
        self.alpha = float(alpha)
        self._rows: dict[tuple[int, ...], np.ndarray] = {}

    def _row(self, ctx: tuple[int, ...]) -> np.ndarray:
        row = self._rows.get(ctx)
        if row is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(len(ctx),) + ctx)
            base = np.random.default_rng(ss).dirichlet(np.full(self.V, self.alpha))
            if self.temperature != 1.0:
                logp = np.log(base) / self.temperature
                logp -= logp.max()
                row = np.exp(logp)
                row /= row.sum()
            else:
                row = base
            row = row.copy()
            row.flags.writeable = False
            self._rows[ctx] = row
        return row

    def next_distribution(self, context) -> np.ndarray:
        """Probability vector of the next token given ``context`` (may be empty)."""
        ctx = _check_context(context, self.V)
        if len(ctx) > self.order:
            ctx = ctx[-self.order:]
        return self._row(ctx)


@dataclass(frozen=True)
class NTPTraceRecord:
    """One per-position record of a next-token-probability trace.

    Either ``probs`` holds the full length-V vector, or ``ids``/``probs`` hold a
    top-K truncation with ``residual`` the unlisted mass. ``token`` is the
    realized token at this step and must appear among the listed ids.
    """

    step: int
    token: int
    probs: np.ndarray
    ids: np.ndarray | None = None
    residual: float = 0.0

    @property
    def truncated(self) -> bool:
        return self.ids is not None

    def full_vector(self, V: int) -> np.ndarray:
        """Full probability vector; residual mass spread uniformly over unlisted ids."""
        if not self.truncated:
            return np.asarray(self.probs, dtype=np.float64)
        p = np.zeros(V)
        p[np.asarray(self.ids) - 1] = self.probs
        rest = V - len(self.ids)
        if rest > 0:
            p[p == 0] += self.residual / rest
        return p / p.sum()


def _validate_record(rec: NTPTraceRecord, V: int, lineno: int | None = None) -> None:
    where = "" if lineno is None else f" (line {lineno})"
    if rec.truncated:
        mass = float(np.sum(rec.probs)) + rec.residual
        if not (1 - _TRUNC_MASS_TOL <= mass <= 1 + _TRUNC_MASS_TOL):
            raise TraceFormatError(f"truncated record {rec.step}: mass {mass!r} not within 1e-6 of 1{where}")
        if rec.token not in set(int(i) for i in rec.ids):
            raise TraceFormatError(f"record {rec.step}: token {rec.token} not among listed ids{where}")
    else:
        if len(rec.probs) != V:
            raise TraceFormatError(f"record {rec.step}: {len(rec.probs)} probs, expected {V}{where}")
        if not 1 <= rec.token <= V:
            raise TraceFormatError(f"record {rec.step}: token {rec.token} outside [1, {V}]{where}")


def write_trace(records: list[NTPTraceRecord], path, V: int) -> None:
    """Write trace records to ``path`` in the line-oriented trace format.

    Records must be ordered by step, contiguous from 1.  Numbers are serialized
    as shortest round-trip decimals, so a write/read round trip is lossless for
    full-vector records.
    """
    truncated = any(r.truncated for r in records)
    for k, rec in enumerate(records):
        if rec.step != k + 1:
            raise TraceFormatError(f"records not contiguous from 1: got step {rec.step} at index {k}")
        _validate_record(rec, V)
    with open(path, "w") as fh:
        fh.write(json.dumps({"version": 1, "V": V, "truncated": truncated}) + "\n")
        for rec in records:
            if rec.truncated:
                obj = {"i": rec.step, "y": rec.token,
                       "ids": [int(i) for i in rec.ids],
                       "p": [float(x) for x in rec.probs],
                       "r": float(rec.residual)}
            else:
                obj = {"i": rec.step, "y": rec.token, "p": [float(x) for x in rec.probs]}
            fh.write(json.dumps(obj) + "\n")


def read_trace(path) -> tuple[list[NTPTraceRecord], int]:
    """Read a trace file, returning ``(records, V)``.

    Raises :class:`TraceFormatError` with a line number on malformed lines or
    non-contiguous steps.
    """
    records: list[NTPTraceRecord] = []
    with open(path) as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as e:
            raise TraceFormatError(f"malformed header (line 1): {e}") from e
        for key in ("version", "V", "truncated"):
            if key not in header:
                raise TraceFormatError(f"header missing field {key!r} (line 1)")
        V = int(header["V"])
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"malformed record (line {lineno}): {e}") from e
            try:
                if "ids" in obj:
                    rec = NTPTraceRecord(step=int(obj["i"]), token=int(obj["y"]),
                                         probs=np.asarray(obj["p"], dtype=np.float64),
                                         ids=np.asarray(obj["ids"], dtype=np.int64),
                                         residual=float(obj["r"]))
                else:
                    rec = NTPTraceRecord(step=int(obj["i"]), token=int(obj["y"]),
                                         probs=np.asarray(obj["p"], dtype=np.float64))
            except (KeyError, TypeError, ValueError) as e:
                raise TraceFormatError(f"malformed record (line {lineno}): {e}") from e
            if rec.step != len(records) + 1:
                raise TraceFormatError(f"non-contiguous step {rec.step} (line {lineno})")
            _validate_record(rec, V, lineno)
            records.append(rec)
    return records, V


@dataclass
class TraceSource:
    """Distribution source backed by an NTP trace.

    The trace is positional: the record at step ``i`` carries the distribution
    of the ``i``-th token given the preceding observed tokens, so
    ``next_distribution(context)`` answers for position ``len(context) + 1``.
    """

    records: list[NTPTraceRecord]
    V: int
    _cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def from_file(cls, path) -> "TraceSource":
        records, V = read_trace(path)
        return cls(records=records, V=V)

    @property
    def tokens(self) -> np.ndarray:
        return np.array([r.token for r in self.records], dtype=np.int64)

    def distribution_at(self, step: int) -> np.ndarray:
        if not 1 <= step <= len(self.records):
            raise ValueError(f"step {step} outside trace of length {len(self.records)}")
        mu = self._cache.get(step)
        if mu is None:
            mu = self.records[step - 1].full_vector(self.V)
            self._cache[step] = mu
        return mu

    def next_distribution(self, context) -> np.ndarray:
        _check_context(context, self.V)
        return self.distribution_at(len(context) + 1)
