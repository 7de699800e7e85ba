"""Watermark key sequences for the EMS and ITS schemes.

Keys are reproduced from ``(scheme, seed, stream, n, V)`` alone; nothing else
is ever stored.  Stream 0 is the detection key, streams ``t >= 1`` are the
independent null replicates used by randomization tests.  EMS keys live on a
counter-based Philox stream so that a single component ``xi_{i,k}`` can be
evaluated lazily without materializing the full n-by-V matrix.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["EmsKeySeq", "ItsKeySeq", "generate_keys", "generate_null_keys",
           "write_key_file", "read_key_file"]

_EMS_TAG = 1
_ITS_TAG = 2


def _philox_key(seed: int, stream: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(_EMS_TAG, int(stream)))
    return ss.generate_state(2, np.uint64)


class EmsKeySeq:
    """Sequence of EMS keys: i.i.d. Unif[0,1] components, one per (position, token)."""

    scheme = "EMS"

    def __init__(self, n: int, V: int, seed: int, stream: int = 0):
        if n < 1:
            raise ValueError("key sequence length must be at least 1")
        self.n = int(n)
        self.V = int(V)
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = _philox_key(seed, stream)
        self._xi: np.ndarray | None = None

    def _uniform_at(self, offset: int, count: int) -> np.ndarray:
        # advance() moves whole 128-bit counter blocks, i.e. 4 doubles at a time
        bg = np.random.Philox(key=self._key)
        bg.advance(offset // 4)
        skip = offset % 4
        return np.random.Generator(bg).random(skip + count)[skip:]

    @property
    def xi(self) -> np.ndarray:
        """Full n-by-V key matrix (materialized once, then cached)."""
        if self._xi is None:
            self._xi = self._uniform_at(0, self.n * self.V).reshape(self.n, self.V)
            self._xi.flags.writeable = False
        return self._xi

    def component(self, i: int, k: int) -> float:
        """Lazily evaluate xi_{i,k} (1-based); bit-identical to ``xi[i-1, k-1]``."""
        if not (1 <= i <= self.n and 1 <= k <= self.V):
            raise ValueError(f"position ({i}, {k}) outside ({self.n}, {self.V})")
        if self._xi is not None:
            return float(self._xi[i - 1, k - 1])
        return float(self._uniform_at((i - 1) * self.V + (k - 1), 1)[0])

    def select(self, tokens: np.ndarray, positions: np.ndarray | None = None) -> np.ndarray:
        """Components xi_{i, tokens[j]} at key positions ``positions`` (default 1..len)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if positions is None:
            positions = np.arange(1, len(tokens) + 1)
        return self.xi[np.asarray(positions) - 1, tokens - 1]


class ItsKeySeq:
    """Sequence of ITS keys: (uniform permutation of [V], Unif[0,1]) per position."""

    scheme = "ITS"

    def __init__(self, n: int, V: int, seed: int, stream: int = 0):
        if n < 1:
            raise ValueError("key sequence length must be at least 1")
        self.n = int(n)
        self.V = int(V)
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(int(seed), spawn_key=(_ITS_TAG, int(stream)))
        rng = np.random.default_rng(ss)
        # pi_i(k) = ranks[i-1, k-1]; argsort of iid uniforms is a uniform permutation
        scores = rng.random((self.n, self.V))
        self.ranks = np.argsort(np.argsort(scores, axis=1), axis=1) + 1
        self.u = rng.random(self.n)

    def pi(self, i: int) -> np.ndarray:
        """Rank vector of position ``i`` (1-based): pi_i(k) = pi(i)[k-1]."""
        return self.ranks[i - 1]


def generate_keys(scheme: str, n: int, V: int, seed: int, stream: int = 0):
    """Generate the watermark key sequence for ``scheme`` ('EMS' or 'ITS')."""
    s = scheme.upper()
    if s == "EMS":
        return EmsKeySeq(n, V, seed, stream)
    if s == "ITS":
        return ItsKeySeq(n, V, seed, stream)
    raise ValueError(f"unknown scheme {scheme!r}")


def generate_null_keys(scheme: str, n: int, V: int, t: int, seed: int):
    """Fresh key sequence for null replicate ``t >= 1``, independent of the
    detection key (stream 0) and of every other replicate."""
    if t < 1:
        raise ValueError("replicate index must be at least 1")
    return generate_keys(scheme, n, V, seed, stream=t)


def write_key_file(keys, path) -> None:
    """Persist a key sequence as its defining fields; keys regenerate on read."""
    with open(path, "w") as fh:
        json.dump({"scheme": keys.scheme, "n": keys.n, "V": keys.V,
                   "seed": keys.seed, "stream": keys.stream}, fh)
        fh.write("\n")


def read_key_file(path):
    with open(path) as fh:
        h = json.load(fh)
    return generate_keys(h["scheme"], h["n"], h["V"], h["seed"], stream=h.get("stream", 0))
