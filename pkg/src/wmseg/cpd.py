"""Change-point machinery over p-value sequences.

A CUSUM-scaled two-sample CDF-difference statistic locates a single split;
its significance is assessed by a moving block bootstrap (the p-value
sequence is B-dependent, so i.i.d. resampling is not valid); seeded intervals
plus narrowest-over-threshold selection turn the single-split test into a
multiple change-point estimator.  Change points are reported in the
segment-start convention: index c means the token at c opens a new segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = ["Interval", "BootstrapConfig", "ChangePointSet", "IntervalDiagnostic",
           "ks_stat", "split_stats", "best_split", "block_bootstrap_pvalue",
           "seeded_intervals", "seedbs_not", "rand_index",
           "write_changepoints", "read_changepoints"]


@dataclass(frozen=True)
class Interval:
    """Half-open index interval (r, s], 0 <= r < s <= m."""

    r: int
    s: int

    def __post_init__(self):
        if not 0 <= self.r < self.s:
            raise ValueError(f"invalid interval ({self.r}, {self.s}]")

    def __len__(self) -> int:
        return self.s - self.r

    def __contains__(self, tau: int) -> bool:
        return self.r < tau <= self.s


@dataclass
class BootstrapConfig:
    """Moving block bootstrap parameters: block size, replicate count, seed."""

    block: int = 20
    T: int = 999
    seed: int = 0

    def __post_init__(self):
        if self.block < 1 or self.T < 1:
            raise ValueError("block size and replicate count must be at least 1")


@dataclass
class ChangePointSet:
    """Sorted change-point indices (segment-start convention) over [1, m]."""

    points: np.ndarray
    m: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if len(np.unique(pts)) != len(pts):
            raise ValueError("duplicate change points")
        self.points = np.sort(pts)

    def __len__(self) -> int:
        return len(self.points)

    def segment_labels(self) -> np.ndarray:
        """Cluster id of every position 1..m (0-based array)."""
        return np.searchsorted(self.points, np.arange(1, self.m + 1), side="right")


@dataclass
class IntervalDiagnostic:
    r: int
    s: int
    tau_hat: int
    S: float
    p_tilde: float
    selected: bool = False


def _cdf_counts(x: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Prefix counts of x <= v: out[t, j] = #{i <= t : x_i <= vals_j} (t = 1..len)."""
    return np.cumsum(x[:, None] <= vals[None, :], axis=0)


def split_stats(x: np.ndarray, margin: int = 1) -> np.ndarray:
    """S(tau) for every split tau = 1..L-1 of the segment ``x``.

    S(tau) = sup_t tau (L - tau) / L^{3/2} |F_{1:tau}(t) - F_{tau+1:L}(t)|;
    the sup is attained on the pooled sample values, where it is evaluated
    exactly.  Entries outside ``margin <= tau <= L - margin`` are -inf.
    """
    x = np.asarray(x, dtype=np.float64)
    L = len(x)
    if L < 2:
        raise ValueError("segment must contain at least 2 values")
    margin = max(int(margin), 1)
    vals = np.unique(x)
    cnt = _cdf_counts(x, vals)
    tot = cnt[-1]
    taus = np.arange(1, L, dtype=np.float64)
    left = cnt[:-1] / taus[:, None]
    right = (tot[None, :] - cnt[:-1]) / (L - taus)[:, None]
    D = np.abs(left - right).max(axis=1)
    S = taus * (L - taus) / L ** 1.5 * D
    if margin > 1:
        S[: margin - 1] = -np.inf
        S[L - margin:] = -np.inf
    return S


def ks_stat(x: np.ndarray, tau: int) -> float:
    """CDF-difference statistic of one split: tau elements left, the rest right."""
    x = np.asarray(x, dtype=np.float64)
    L = len(x)
    if not 0 < tau < L:
        raise ValueError(f"degenerate split tau = {tau} of a length-{L} segment")
    return float(split_stats(x)[tau - 1])


def best_split(x: np.ndarray, margin: int = 1) -> tuple[int, float]:
    """Argmax split of ``x``: (tau_hat, S value); ties break towards smaller tau."""
    S = split_stats(x, margin=margin)
    if not np.any(np.isfinite(S)):
        raise ValueError("no admissible split under the margin constraint")
    tau = int(np.argmax(S)) + 1
    return tau, float(S[tau - 1])


def block_bootstrap_pvalue(x: np.ndarray, observed_max: float, config: BootstrapConfig,
                           margin: int = 1, rng=None, chunk: int = 100,
                           stop_count: int | None = None,
                           admissible: np.ndarray | None = None) -> float:
    """Circular-block-bootstrap p-value of the maximal split statistic.

    Overlapping blocks of length ``config.block`` are resampled with
    replacement, concatenated, and truncated to the segment length; each
    replicate contributes its own max_tau S*, scanned over the same admissible
    tau range as the observed maximum.  Blocks wrap around the segment end
    (circular scheme): without wrapping, values within a block length of
    either end appear in far fewer blocks than interior values, so features
    near segment boundaries are underrepresented in the resamples and the
    p-value becomes anti-conservative exactly there.

    ``stop_count`` allows an early exit: once that many replicate maxima have
    reached ``observed_max``, the full-run p-value is already bounded below by
    (1 + stop_count) / (T + 1), so remaining replicates cannot change a
    threshold decision at that level.  The returned value is then the p-value
    of the replicates actually drawn, which is at least as large.

    ``admissible`` restricts the tau scan (boolean over tau = 1..L-1); it must
    match the range used for the observed maximum.
    """
    x = np.asarray(x, dtype=np.float64)
    L = len(x)
    Bp = config.block
    if Bp > L:
        raise ValueError(f"block size {Bp} exceeds segment length {L}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    nblocks = -(-L // Bp)
    vals = np.unique(x)
    taus = np.arange(1, L, dtype=np.float64)
    scale = taus * (L - taus) / L ** 1.5
    if admissible is None:
        admissible = (taus >= max(margin, 1)) & (L - taus >= max(margin, 1))
    count = 0
    done = 0
    while done < config.T:
        reps = min(chunk, config.T - done)
        starts = rng.integers(0, L, size=(reps, nblocks))
        idx = (starts[:, :, None] + np.arange(Bp)[None, None, :]).reshape(reps, -1)[:, :L] % L
        xb = x[idx]                                          # (reps, L)
        cnt = np.cumsum(xb[:, :, None] <= vals[None, None, :], axis=1)
        tot = cnt[:, -1:, :]
        left = cnt[:, :-1, :] / taus[None, :, None]
        right = (tot - cnt[:, :-1, :]) / (L - taus)[None, :, None]
        S = scale[None, :] * np.abs(left - right).max(axis=2)
        S[:, ~admissible] = -np.inf
        count += int(np.sum(observed_max <= S.max(axis=1)))
        done += reps
        if stop_count is not None and count >= stop_count:
            return (1 + count) / (done + 1)
    return (1 + count) / (config.T + 1)


def seeded_intervals(m: int, a: float) -> list[Interval]:
    """Deterministic multi-scale candidate intervals (deduplicated).

    Layer 1 is (0, m]; layer k holds n_k = 2 ceil((1/a)^(k-1)) - 1 intervals
    of length m a^(k-1) placed at equal shifts with floor/ceil endpoints.
    """
    if not 0.5 <= a < 1:
        raise ValueError("decay parameter must lie in [1/2, 1)")
    if m < 2:
        raise ValueError("m must be at least 2")
    layers = int(np.ceil(np.log(m) / np.log(1.0 / a)))
    out: list[Interval] = [Interval(0, m)]
    seen = {(0, m)}
    for k in range(2, layers + 1):
        nk = 2 * int(np.ceil((1.0 / a) ** (k - 1))) - 1
        lk = m * a ** (k - 1)
        sk = (m - lk) / (nk - 1)
        for i in range(1, nk + 1):
            r = int(np.floor((i - 1) * sk))
            s = min(int(np.ceil((i - 1) * sk + lk)), m)
            if (r, s) not in seen and s > r:
                seen.add((r, s))
                out.append(Interval(r, s))
    return out


def seedbs_not(pseq, a: float = 2 ** -0.5, zeta: float = 0.01,
               bootstrap: BootstrapConfig | None = None,
               min_len: int | None = None, margin: int | None = None,
               edge_margin: int | None = None
               ) -> tuple[ChangePointSet, list[IntervalDiagnostic]]:
    """SeedBS-NOT: seeded intervals, per-interval split + bootstrap p-value,
    then narrowest-over-threshold selection.

    ``pseq`` is a PValueSeq (or any object with ``p`` and ``B``).  Intervals
    shorter than ``min_len`` (default 2 B) are skipped; splits keep a margin of
    B / 2 from both interval ends, since sub-window segments are smoothed away
    by the sliding window.  Splits are also kept ``edge_margin`` (default B)
    positions away from the ends of the whole sequence: a change point closer
    to the boundary than one window cannot be resolved by the windowed scan,
    and the clipped edge windows make the sequence non-stationary there, which
    the block bootstrap does not model.  Returns the change points
    (segment-start indices) and per-interval diagnostics.
    """
    p = np.asarray(pseq.p, dtype=np.float64)
    B = pseq.B
    m = len(p)
    if bootstrap is None:
        bootstrap = BootstrapConfig(block=B)
    if min_len is None:
        min_len = 2 * B
    if margin is None:
        margin = max(B // 2, 1)
    if edge_margin is None:
        edge_margin = B
    diagnostics: list[IntervalDiagnostic] = []
    candidates: list[int] = []
    for iv in seeded_intervals(m, a):
        L = len(iv)
        if L < max(min_len, 2 * margin, 2):
            continue
        seg = p[iv.r:iv.s]
        taus = np.arange(1, L)
        admissible = ((taus >= margin) & (L - taus >= margin)
                      & (iv.r + taus >= edge_margin) & (iv.r + taus <= m - edge_margin))
        if not np.any(admissible):
            continue
        S = split_stats(seg)
        S = np.where(admissible, S, -np.inf)
        tau_loc = int(np.argmax(S)) + 1
        smax = float(S[tau_loc - 1])
        rng = np.random.default_rng(np.random.SeedSequence(bootstrap.seed, spawn_key=(iv.r, iv.s)))
        # p~ is only compared to zeta, so the bootstrap may stop as soon as
        # enough exceedances make the decision certain
        stop = int(np.ceil(zeta * (bootstrap.T + 1) - 1))
        ptilde = block_bootstrap_pvalue(seg, smax, bootstrap, margin=margin, rng=rng,
                                        stop_count=max(stop, 1), admissible=admissible)
        diag = IntervalDiagnostic(r=iv.r, s=iv.s, tau_hat=iv.r + tau_loc, S=smax, p_tilde=ptilde)
        if ptilde < zeta:
            candidates.append(len(diagnostics))
        diagnostics.append(diag)
    emitted: list[int] = []
    remaining = list(candidates)
    while remaining:
        # narrowest interval first; ties towards the smaller left endpoint
        best = min(remaining, key=lambda j: (diagnostics[j].s - diagnostics[j].r, diagnostics[j].r))
        d = diagnostics[best]
        d.selected = True
        emitted.append(d.tau_hat)
        remaining = [j for j in remaining
                     if not diagnostics[j].r < d.tau_hat <= diagnostics[j].s]
    points = np.sort(np.asarray(emitted, dtype=np.int64)) + 1  # segment-start convention
    return ChangePointSet(points=points, m=m), diagnostics


def rand_index(truth: ChangePointSet, est: ChangePointSet, m: int | None = None) -> float:
    """Fraction of position pairs on which the two segmentations agree."""
    if not isinstance(truth, ChangePointSet):
        if m is None:
            raise ValueError("m is required when truth is a plain array")
        truth = ChangePointSet(points=np.asarray(truth, dtype=np.int64), m=m)
    if not isinstance(est, ChangePointSet):
        est = ChangePointSet(points=np.asarray(est, dtype=np.int64), m=truth.m)
    if m is None:
        m = truth.m
    if truth.m != est.m:
        raise ValueError("change point sets refer to different lengths")
    if m < 2:
        return 1.0
    lt = truth.segment_labels()
    le = est.segment_labels()
    pair = lt.astype(np.int64) * (est.points.size + 2) + le
    _, counts = np.unique(pair, return_counts=True)
    _, ca = np.unique(lt, return_counts=True)
    _, cb = np.unique(le, return_counts=True)

    def c2(v):
        v = v.astype(np.float64)
        return float(np.sum(v * (v - 1) / 2))

    total = m * (m - 1) / 2
    return float((total + 2 * c2(counts) - c2(ca) - c2(cb)) / total)


def write_changepoints(cps: ChangePointSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"m": cps.m}) + "\n")
        for c in cps.points:
            fh.write(f"{int(c)}\n")


def read_changepoints(path) -> ChangePointSet:
    with open(path) as fh:
        header = json.loads(fh.readline())
        pts = [int(line) for line in fh if line.strip()]
    return ChangePointSet(points=np.array(pts, dtype=np.int64), m=int(header["m"]))
