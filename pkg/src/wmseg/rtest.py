"""Randomization tests: global detection p-value and sliding-window p-value sequences.

The observed statistic is ranked against statistics recomputed with fresh key
sequences drawn from independent counter-based streams, so p-values live on
the discrete grid {1/(T+1), ..., 1} and are reproducible under any evaluation
order.  The sliding-window sequence reuses one fresh key sequence per
replicate across all window positions, which makes neighbouring p-values
share nulls: the resulting B-dependence is handled downstream by the moving
block bootstrap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .keys import generate_null_keys
from .stats import (DetectionContext, Statistic, hit_matrix, pair_base_scores,
                    phi_its_huber, resolve_statistic, scan_profile,
                    scan_profiles_weighted)

__all__ = ["RandTestConfig", "PValueSeq", "randomization_pvalue",
           "pvalue_sequence", "pvalue_sequences", "write_pvalseq", "read_pvalseq"]


@dataclass
class RandTestConfig:
    """Null replicate count, level, statistic selection, and seed of a test."""

    T: int = 999
    alpha: float = 0.05
    statistic: str = "ems-base"
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class PValueSeq:
    """Sliding-window p-values stored as exact integer numerators over T + 1."""

    numerators: np.ndarray
    T: int
    B: int
    statistic: str = ""

    def __post_init__(self):
        self.numerators = np.asarray(self.numerators, dtype=np.int64)

    @property
    def m(self) -> int:
        return len(self.numerators)

    @property
    def p(self) -> np.ndarray:
        return self.numerators / (self.T + 1)


def randomization_pvalue(keys, ctx: DetectionContext, config: RandTestConfig,
                         stat: Statistic | None = None) -> float:
    """Global randomization p-value: (1 + #{t : phi_obs <= phi_t}) / (T + 1)."""
    if stat is None:
        stat = resolve_statistic(config.statistic)
    observed = stat.value(keys, ctx)
    count = 0
    for t in range(1, config.T + 1):
        null_keys = generate_null_keys(keys.scheme, keys.n, keys.V, t, config.seed)
        if observed <= stat.value(null_keys, ctx):
            count += 1
    return (1 + count) / (config.T + 1)


def _huber_profile(keys, ctx: DetectionContext, B: int) -> np.ndarray:
    """Windowed scan maxima for the non-separable Huber statistic (direct path)."""
    hits = hit_matrix(keys, ctx.tokens, ctx.mu)
    n, m = hits.shape
    half = B // 2
    out = np.empty(m)
    for i0 in range(m):
        i = i0 + 1
        best = -np.inf
        d = np.arange(-half, half + 1)
        d = d[(i + d >= 1) & (i + d <= m)]
        for k in range(1, n + 1):
            # key window must cover the whole (edge-clipped) text window
            if k + d[0] < 1 or k + d[-1] > n:
                continue
            ti = i + d - 1
            ki = k + d - 1
            best = max(best, phi_its_huber(hit=hits[ki, ti], mass=ctx.p[ti]))
        out[i0] = best
    return out


def _profile(keys, ctx: DetectionContext, B: int, stat: Statistic) -> np.ndarray:
    if stat.separable:
        return scan_profile(stat.pair_scores(keys, ctx), B)
    return _huber_profile(keys, ctx, B)


def pvalue_sequence(keys, ctx: DetectionContext, B: int, config: RandTestConfig,
                    stat: Statistic | None = None) -> PValueSeq:
    """One windowed randomization p-value per text position."""
    if stat is None:
        stat = resolve_statistic(config.statistic)
    [seq] = pvalue_sequences(keys, B, config, [(stat, ctx)])
    return seq


def pvalue_sequences(keys, B: int, config: RandTestConfig,
                     pairs: list[tuple[Statistic, DetectionContext]]) -> list[PValueSeq]:
    """p-value sequences for several (statistic, context) pairs over one text.

    All pairs must refer to the same token sequence; they may differ in their
    NTP provenance (exact vs empty-prompt estimates).  A single pass over the
    T null key sequences ensures each statistic sees exactly the replicates it
    would see on its own, so results match per-statistic calls bit for bit.
    """
    if not pairs:
        return []
    m = len(pairs[0][1].tokens)
    if B % 2 != 0:
        raise ValueError("window size B must be even")
    if B > m:
        raise ValueError(f"window size {B} exceeds text length {m}")
    weights = [st.weights(ctx) if st.separable else None for st, ctx in pairs]
    groups: dict[str, list[int]] = {}
    direct: list[int] = []
    for idx, (st, _) in enumerate(pairs):
        if st.separable:
            groups.setdefault(st.base_kind, []).append(idx)
        else:
            direct.append(idx)

    def profiles(kseq):
        out: list[np.ndarray | None] = [None] * len(pairs)
        tokens = pairs[0][1].tokens
        for kind, idxs in groups.items():
            profs = scan_profiles_weighted(pair_base_scores(kind, kseq, tokens),
                                           [weights[i] for i in idxs], B)
            for i, pr in zip(idxs, profs):
                out[i] = pr
        for i in direct:
            st, ctx = pairs[i]
            out[i] = _huber_profile(kseq, ctx, B)
        return out

    observed = profiles(keys)
    counts = [np.zeros(m, dtype=np.int64) for _ in pairs]
    for t in range(1, config.T + 1):
        null_keys = generate_null_keys(keys.scheme, keys.n, keys.V, t, config.seed)
        for obs, cnt, null in zip(observed, counts, profiles(null_keys)):
            cnt += obs <= null
    return [PValueSeq(numerators=1 + cnt, T=config.T, B=B, statistic=st.name)
            for cnt, (st, _) in zip(counts, pairs)]


def write_pvalseq(seq: PValueSeq, path) -> None:
    """Serialize p-values exactly, as integer numerators over T + 1."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"m": seq.m, "B": seq.B, "T": seq.T,
                             "statistic": seq.statistic}) + "\n")
        for j in seq.numerators:
            fh.write(f"{int(j)}\n")


def read_pvalseq(path) -> PValueSeq:
    with open(path) as fh:
        header = json.loads(fh.readline())
        nums = [int(line) for line in fh if line.strip()]
    if len(nums) != header["m"]:
        raise ValueError(f"expected {header['m']} p-values, found {len(nums)}")
    return PValueSeq(numerators=np.array(nums), T=header["T"], B=header["B"],
                     statistic=header.get("statistic", ""))
