"""Unbiased watermarked generation, plain sampling, and text attacks.

Both decoders are unbiased: the marginal token distribution under a fresh key
equals the model distribution exactly (EMS via the Gumbel/exponential-minimum
trick, ITS via a permuted inverse CDF).  Attacks splice in plain tokens and
keep per-token ground-truth labels so the true change points of a partially
watermarked sequence can be recovered.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .keys import EmsKeySeq, ItsKeySeq

__all__ = ["TokenSeq", "AttackSpec", "decode_ems", "decode_its",
           "decode_ems_batch", "decode_its_batch",
           "generate_watermarked", "generate_plain", "apply_attack",
           "write_tokenseq", "read_tokenseq"]


@dataclass
class TokenSeq:
    """Token sequence with optional per-token watermark ground truth.

    ``labels[i]`` is True where token ``i`` is watermarked.  ``n0`` records the
    prompt length used at generation time (the prompt itself is not stored).
    """

    tokens: np.ndarray
    labels: np.ndarray | None = None
    n0: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if len(self.labels) != len(self.tokens):
                raise ValueError("labels and tokens must have equal length")

    def __len__(self) -> int:
        return len(self.tokens)

    def true_change_points(self) -> np.ndarray:
        """Indices (1-based, segment-start convention) where the label flips."""
        if self.labels is None or len(self.labels) < 2:
            return np.array([], dtype=np.int64)
        flips = np.nonzero(self.labels[1:] != self.labels[:-1])[0]
        return flips + 2  # first index of the new segment


@dataclass(frozen=True)
class AttackSpec:
    """One edit applied to a token sequence.

    ``insertion`` splices ``length`` plain tokens so that the first inserted
    token lands at index ``position``; ``substitution`` replaces the tokens at
    indices ``position .. position+length-1`` (1-based, inclusive).
    """

    kind: str
    position: int
    length: int

    def __post_init__(self):
        if self.kind not in ("insertion", "substitution"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.length < 0:
            raise ValueError("attack length must be nonnegative")


def decode_ems(xi_row: np.ndarray, mu: np.ndarray) -> int:
    """EMS decoder: token minimizing -log(xi_k)/mu(k); 1-based token id.

    Zero-probability tokens are never returned; exact cost ties break towards
    the lowest token id.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if not np.any(mu > 0):
        raise ValueError("mu has no positive mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = -np.log(xi_row) / mu
    cost[mu == 0] = np.inf
    return int(np.argmin(cost)) + 1


def decode_ems_batch(xi: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Vectorized EMS decoder over rows of the key matrix ``xi`` (count x V)."""
    mu = np.asarray(mu, dtype=np.float64)
    if not np.any(mu > 0):
        raise ValueError("mu has no positive mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = -np.log(xi) / mu[None, :]
    cost[:, mu == 0] = np.inf
    return np.argmin(cost, axis=1) + 1


def decode_its(ranks_row: np.ndarray, u: float, mu: np.ndarray) -> int:
    """ITS decoder: first token in pi-order whose cumulative mass reaches ``u``.

    Returns the unique k with mu(j: pi(j) < pi(k)) < u <= mu(j: pi(j) <= pi(k));
    u = 0 maps to the first positive-mass token in pi-order.
    """
    return int(decode_its_batch(ranks_row[None, :], np.array([u]), mu)[0])


def decode_its_batch(ranks: np.ndarray, u: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Vectorized ITS decoder over (permutation, uniform) key rows."""
    mu = np.asarray(mu, dtype=np.float64)
    order = np.argsort(ranks, axis=1)            # tokens (0-based) in pi-order
    cum = np.cumsum(mu[order], axis=1)
    cum[:, -1] = np.maximum(cum[:, -1], 1.0)     # guard rounding at the top end
    u = np.asarray(u, dtype=np.float64)
    # first index with cum >= u; empty (zero-mass) intervals are skipped
    # because cum does not increase across them
    idx = np.sum(cum < u[:, None], axis=1)
    # u == 0 lands on the first positive-mass token
    zero = u <= 0.0
    if np.any(zero):
        first_pos = np.argmax(cum > 0, axis=1)
        idx = np.where(zero, first_pos, idx)
    return order[np.arange(len(u)), idx] + 1


def generate_watermarked(source, keys, n: int, prompt=None) -> TokenSeq:
    """Autoregressively generate ``n`` watermarked tokens with the decoder of ``keys``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > keys.n:
        raise ValueError(f"key sequence has length {keys.n} < n = {n}")
    prompt_tokens = [] if prompt is None else list(np.asarray(prompt.tokens if isinstance(prompt, TokenSeq) else prompt))
    context = list(prompt_tokens)
    out = np.empty(n, dtype=np.int64)
    for i in range(1, n + 1):
        mu = source.next_distribution(context)
        if isinstance(keys, EmsKeySeq):
            y = decode_ems(keys.xi[i - 1], mu)
        elif isinstance(keys, ItsKeySeq):
            y = decode_its(keys.ranks[i - 1], keys.u[i - 1], mu)
        else:
            raise TypeError(f"unsupported key sequence type {type(keys)!r}")
        out[i - 1] = y
        context.append(y)
    return TokenSeq(out, labels=np.ones(n, dtype=bool), n0=len(prompt_tokens))


def generate_plain(source, n: int, prompt=None, seed: int = 0, rng=None) -> TokenSeq:
    """Generate ``n`` tokens by multinomial sampling from the source."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if rng is None:
        rng = np.random.default_rng(seed)
    prompt_tokens = [] if prompt is None else list(np.asarray(prompt.tokens if isinstance(prompt, TokenSeq) else prompt))
    context = list(prompt_tokens)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        mu = source.next_distribution(context)
        y = int(rng.choice(len(mu), p=mu)) + 1
        out[i] = y
        context.append(y)
    return TokenSeq(out, labels=np.zeros(n, dtype=bool), n0=len(prompt_tokens))


def apply_attack(text: TokenSeq, spec: AttackSpec, source, keys=None,
                 seed: int = 0, rng=None) -> TokenSeq:
    """Apply one attack to ``text``, updating tokens and ground-truth labels.

    Insertion splices plain tokens sampled autoregressively from the running
    (post-splice) context; the suffix keeps its original tokens.  Substitution
    regenerates the whole tail given the edited context: plain sampling on the
    attacked range, the watermark decoder (same keys, aligned positions)
    elsewhere.  Substitution therefore requires ``keys``.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    m = len(text)
    labels = text.labels if text.labels is not None else np.ones(m, dtype=bool)

    if spec.kind == "insertion":
        if not 1 <= spec.position <= m + 1:
            raise ValueError(f"insertion position {spec.position} outside [1, {m + 1}]")
        pos = spec.position - 1  # number of tokens kept before the splice
        context = list(text.tokens[:pos])
        inserted = np.empty(spec.length, dtype=np.int64)
        for j in range(spec.length):
            mu = source.next_distribution(context)
            y = int(rng.choice(len(mu), p=mu)) + 1
            inserted[j] = y
            context.append(y)
        tokens = np.concatenate([text.tokens[:pos], inserted, text.tokens[pos:]])
        new_labels = np.concatenate([labels[:pos], np.zeros(spec.length, dtype=bool), labels[pos:]])
        return TokenSeq(tokens, labels=new_labels, n0=text.n0)

    # substitution
    a, b = spec.position, spec.position + spec.length - 1
    if spec.length == 0:
        return TokenSeq(text.tokens.copy(), labels=labels.copy(), n0=text.n0)
    if not (1 <= a and b <= m):
        raise ValueError(f"substitution range [{a}, {b}] outside [1, {m}]")
    if keys is None:
        raise ValueError("substitution requires the watermark key sequence")
    if keys.n < m:
        raise ValueError("key sequence shorter than text")
    tokens = text.tokens.copy()
    new_labels = labels.copy()
    context = list(tokens[:a - 1])
    for i in range(a, m + 1):
        mu = source.next_distribution(context)
        if a <= i <= b:
            y = int(rng.choice(len(mu), p=mu)) + 1
            new_labels[i - 1] = False
        else:
            if isinstance(keys, EmsKeySeq):
                y = decode_ems(keys.xi[i - 1], mu)
            else:
                y = decode_its(keys.ranks[i - 1], keys.u[i - 1], mu)
            new_labels[i - 1] = labels[i - 1]
        tokens[i - 1] = y
        context.append(y)
    return TokenSeq(tokens, labels=new_labels, n0=text.n0)


def write_tokenseq(text: TokenSeq, path, V: int) -> None:
    """Serialize a token sequence: header {V, n, n0}, one {y, label} line per token."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"V": int(V), "n": len(text), "n0": int(text.n0)}) + "\n")
        labels = text.labels
        for i, y in enumerate(text.tokens):
            obj = {"y": int(y)}
            if labels is not None:
                obj["label"] = "watermarked" if labels[i] else "plain"
            fh.write(json.dumps(obj) + "\n")


def read_tokenseq(path) -> tuple[TokenSeq, int]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        V, n, n0 = int(header["V"]), int(header["n"]), int(header["n0"])
        tokens = np.empty(n, dtype=np.int64)
        labels: list[bool] | None = []
        for i in range(n):
            obj = json.loads(fh.readline())
            tokens[i] = int(obj["y"])
            if labels is not None and "label" in obj:
                labels.append(obj["label"] == "watermarked")
            else:
                labels = None
    lab = np.asarray(labels, dtype=bool) if labels else None
    return TokenSeq(tokens, labels=lab, n0=n0), V
