"""Detection test statistics for the EMS and ITS watermarking schemes.

Every statistic is oriented so that larger values mean more watermark
evidence.  The EMS statistic is centered (+1 per unit weight) so its null mean
is 0 at unit weights.  Weighted variants take per-position weights derived
from next-token probabilities; the ITS adaptive statistic maximizes a
contamination-model log-likelihood ratio over the contamination fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NTP_FLOOR", "XI_FLOOR", "floor_ntp", "lr_weights", "shrink_ntp",
           "phi_ems", "phi_ems_onemlog", "phi_its", "ItsEvidence",
           "its_evidence", "aligned_hits", "hit_matrix", "phi_its_huber",
           "DetectionContext", "Statistic", "resolve_statistic",
           "STATISTIC_NAMES", "scan_max", "scan_profile",
           "scan_profiles_weighted", "pair_base_scores"]

NTP_FLOOR = 1e-12
XI_FLOOR = 1e-300


def floor_ntp(p: np.ndarray, floor: float = NTP_FLOOR) -> np.ndarray:
    """Clamp probabilities away from zero (guards exact zeros from traces)."""
    return np.maximum(np.asarray(p, dtype=np.float64), floor)


def lr_weights(p: np.ndarray) -> np.ndarray:
    """Likelihood-ratio weights w_i = (1 - p_i) / p_i; strictly decreasing in p."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("NTPs must lie in (0, 1]; floor them upstream")
    return (1.0 - p) / p


def shrink_ntp(q: np.ndarray, lam: float, p0=0.5) -> np.ndarray:
    """Regularize estimated NTPs towards a baseline: lam * q + (1 - lam) * p0."""
    if not 0 < lam < 1:
        raise ValueError("shrinkage parameter must lie strictly in (0, 1)")
    q = np.asarray(q, dtype=np.float64)
    p0 = np.asarray(p0, dtype=np.float64)
    if np.any(q < 0) or np.any(q > 1):
        raise ValueError("estimated NTPs must lie in [0, 1]")
    if np.any(p0 <= 0) or np.any(p0 >= 1):
        raise ValueError("baseline probabilities must lie in (0, 1)")
    return lam * q + (1.0 - lam) * p0


def _selected_xi(keys, tokens) -> np.ndarray:
    xi = keys.select(tokens)
    return np.maximum(xi, XI_FLOOR)


def phi_ems(keys, tokens, weights=None) -> float:
    """Centered EMS statistic: (1/n) sum w_i (log xi_{i, y_i} + 1)."""
    xi = _selected_xi(keys, tokens)
    terms = np.log(xi) + 1.0
    if weights is not None:
        terms = np.asarray(weights, dtype=np.float64) * terms
    return float(terms.mean())


def phi_ems_onemlog(keys, tokens, weights=None) -> float:
    """Alternative EMS statistic: (1/n) sum w_i (-log(1 - xi_{i, y_i}))."""
    xi = keys.select(tokens)
    terms = -np.log(np.maximum(1.0 - xi, XI_FLOOR))
    if weights is not None:
        terms = np.asarray(weights, dtype=np.float64) * terms
    return float(terms.mean())


def phi_its(keys, tokens, weights=None) -> float:
    """Weighted ITS statistic: (1/n) sum w_i (u_i - 1/2)((pi_i(y_i) - 1)/(V - 1) - 1/2)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    n = len(tokens)
    V = keys.V
    if V < 2:
        raise ValueError("V must be at least 2")
    r = keys.ranks[np.arange(n), tokens - 1]
    terms = (keys.u[:n] - 0.5) * ((r - 1) / (V - 1) - 0.5)
    if weights is not None:
        terms = np.asarray(weights, dtype=np.float64) * terms
    return float(terms.mean())


@dataclass
class ItsEvidence:
    """Per-position ITS detection evidence.

    ``rank`` is pi_i(y_i); ``hit`` indicates u_i landing inside the token's
    inverse-CDF interval; ``mass`` is the interval length mu_i(y_i).
    """

    rank: np.ndarray
    u: np.ndarray
    hit: np.ndarray
    mass: np.ndarray


def _interval_lo_mass(ranks_row, mu, token):
    """Lower endpoint and length of the ITS interval for ``token`` under one key."""
    r = ranks_row[token - 1]
    lo = float(mu[ranks_row < r].sum())
    return lo, float(mu[token - 1])


def its_evidence(keys, tokens, source) -> ItsEvidence:
    """Evidence arrays for aligned keys/text, with exact distributions from ``source``."""
    tokens = np.asarray(tokens, dtype=np.int64)
    n = len(tokens)
    lo = np.empty(n)
    mass = np.empty(n)
    for i in range(n):
        mu = source.next_distribution(tokens[:i])
        lo[i], mass[i] = _interval_lo_mass(keys.ranks[i], mu, int(tokens[i]))
    u = keys.u[:n]
    hit = (u > lo) & (u <= lo + mass)
    hit |= (u == 0) & (lo == 0) & (mass > 0)  # u = 0 maps to the first interval
    r = keys.ranks[np.arange(n), tokens - 1]
    return ItsEvidence(rank=r, u=u.copy(), hit=hit, mass=mass)


def aligned_hits(keys, tokens, mu: np.ndarray) -> np.ndarray:
    """Hit indicators for aligned keys/text (key position i against text position i)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    m = len(tokens)
    idx = np.arange(m)
    token_ranks = keys.ranks[idx, tokens - 1]
    below = keys.ranks[:m] < token_ranks[:, None]
    lo = np.sum(mu * below, axis=1)
    mass = mu[idx, tokens - 1]
    u = keys.u[:m]
    return ((u > lo) & (u <= lo + mass)) | ((u == 0) & (lo == 0) & (mass > 0))


def hit_matrix(keys, tokens, mu: np.ndarray) -> np.ndarray:
    """Hit indicators for every (key position, text position) pair.

    ``mu`` is the (m, V) matrix of per-position distributions of the text.
    Entry (j, i) asks whether u_j falls in the interval of token y_i under the
    permutation pi_j and distribution mu_i.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    n, m = keys.n, len(tokens)
    mass = mu[np.arange(m), tokens - 1]
    hits = np.empty((n, m), dtype=bool)
    for j in range(n):
        r = keys.ranks[j]
        below = r[tokens - 1][:, None] > r[None, :]        # (m, V): pi_j(k) < pi_j(y_i)
        lo = np.sum(mu * below, axis=1)
        u = keys.u[j]
        hits[j] = ((u > lo) & (u <= lo + mass)) | ((u == 0) & (lo == 0) & (mass > 0))
    return hits


def _huber_objective(eps, hit, inv_p):
    # sum over positions of log((1 - eps)/p_i * hit_i + eps)
    vals = np.where(hit, (1.0 - eps) * inv_p + eps, eps)
    if np.any(vals <= 0):
        return -np.inf
    return float(np.log(vals).sum())


def phi_its_huber(evidence: ItsEvidence | None = None, *, hit=None, mass=None,
                  tol: float = 1e-9) -> float:
    """Adaptive ITS statistic: max over contamination eps of the contamination
    log-likelihood ratio.  The objective is concave in eps (log of affine
    terms), so a ternary search localizes the maximizer to ``tol``.
    """
    if evidence is not None:
        hit, mass = evidence.hit, evidence.mass
    hit = np.asarray(hit, dtype=bool)
    p = np.asarray(mass, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("interval masses must be positive")
    inv_p = 1.0 / p
    if hit.all():
        # every term decreasing in eps (p <= 1): optimum at eps = 0
        return float(np.log(inv_p).sum())
    lo_e, hi_e = 0.0, 1.0
    while hi_e - lo_e > tol:
        m1 = lo_e + (hi_e - lo_e) / 3.0
        m2 = hi_e - (hi_e - lo_e) / 3.0
        if _huber_objective(m1, hit, inv_p) < _huber_objective(m2, hit, inv_p):
            lo_e = m1
        else:
            hi_e = m2
    best = _huber_objective(0.5 * (lo_e + hi_e), hit, inv_p)
    return max(best, _huber_objective(1.0, hit, inv_p))


# ---------------------------------------------------------------------------
# Detection context and statistic selectors
# ---------------------------------------------------------------------------

@dataclass
class DetectionContext:
    """Everything a statistic needs about the observed text.

    ``p`` are per-position NTPs of the realized tokens (exact or estimated,
    floored); ``mu`` the per-position distribution matrix (m, V), needed only
    by ITS evidence.
    """

    tokens: np.ndarray
    V: int
    p: np.ndarray | None = None
    mu: np.ndarray | None = None

    @classmethod
    def from_source(cls, source, tokens, need_mu: bool = False) -> "DetectionContext":
        """Query ``source`` with the observed text itself as context (empty prompt)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        m = len(tokens)
        V = source.V
        mu = np.empty((m, V))
        for i in range(m):
            mu[i] = source.next_distribution(tokens[:i])
        p = floor_ntp(mu[np.arange(m), tokens - 1])
        return cls(tokens=tokens, V=V, p=p, mu=mu if need_mu else None)


STATISTIC_NAMES = ("ems-base", "ems-lr", "ems-shrink", "ems-onemlog",
                   "its-base", "its-weighted", "its-huber")


class Statistic:
    """A named test statistic bound to its weighting rule.

    ``separable`` statistics decompose into per-(key position, text position)
    scores, which enables the vectorized windowed scan; the Huber statistic
    does not and uses a direct evaluation path.
    """

    def __init__(self, name: str, lam: float = 0.5, p0=0.5, weights=None):
        if name not in STATISTIC_NAMES:
            raise ValueError(f"unknown statistic {name!r}; known: {STATISTIC_NAMES}")
        self.name = name
        self.lam = lam
        self.p0 = p0
        self.custom_weights = weights
        self.scheme = "EMS" if name.startswith("ems") else "ITS"
        self.separable = name != "its-huber"

    def weights(self, ctx: DetectionContext) -> np.ndarray | None:
        if self.name in ("ems-base", "ems-onemlog", "its-base"):
            return None
        if self.name == "its-weighted":
            return self.custom_weights
        if ctx.p is None:
            raise ValueError(f"statistic {self.name!r} needs NTPs in the detection context")
        if self.name == "ems-lr":
            return lr_weights(ctx.p)
        if self.name == "ems-shrink":
            return lr_weights(shrink_ntp(ctx.p, self.lam, self.p0))
        return None

    def value(self, keys, ctx: DetectionContext) -> float:
        w = self.weights(ctx)
        if self.name == "ems-onemlog":
            return phi_ems_onemlog(keys, ctx.tokens, w)
        if self.scheme == "EMS":
            return phi_ems(keys, ctx.tokens, w)
        if self.name == "its-huber":
            hit = aligned_hits(keys, ctx.tokens, ctx.mu)
            return phi_its_huber(hit=hit, mass=ctx.p)
        return phi_its(keys, ctx.tokens, w)

    @property
    def base_kind(self) -> str:
        """Identifier of the unweighted pair-score matrix this statistic uses."""
        if not self.separable:
            raise ValueError(f"statistic {self.name!r} is not separable")
        if self.name == "ems-onemlog":
            return "ems-onemlog"
        return "ems" if self.scheme == "EMS" else "its"

    def pair_scores(self, keys, ctx: DetectionContext) -> np.ndarray:
        """Scores C[j, i] pairing key position j with text position i."""
        base = pair_base_scores(self.base_kind, keys, ctx.tokens)
        w = self.weights(ctx)
        if w is not None:
            base = base * np.asarray(w, dtype=np.float64)[None, :]
        return base


def pair_base_scores(kind: str, keys, tokens) -> np.ndarray:
    """Unweighted pair-score matrix shared by all weightings of one family."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if kind == "ems":
        xi = keys.xi[:, tokens - 1]                         # (n, m)
        return np.log(np.maximum(xi, XI_FLOOR)) + 1.0
    if kind == "ems-onemlog":
        xi = keys.xi[:, tokens - 1]
        return -np.log(np.maximum(1.0 - xi, XI_FLOOR))
    if kind == "its":
        r = keys.ranks[:, tokens - 1]                       # (n, m)
        return (keys.u[:, None] - 0.5) * ((r - 1) / (keys.V - 1) - 0.5)
    raise ValueError(f"unknown pair-score kind {kind!r}")


def resolve_statistic(name: str, lam: float = 0.5, p0=0.5, weights=None) -> Statistic:
    return Statistic(name, lam=lam, p0=p0, weights=weights)


# ---------------------------------------------------------------------------
# Windowed scan statistics
# ---------------------------------------------------------------------------

def _diagonal_stack(C: np.ndarray):
    """Rearrange C so that row d holds the diagonal j - i = d - (m - 1).

    Returns (stacked, valid) of shape (n + m - 1, m): stacked[d, i] = C[i + off, i]
    with off = d - m + 1, zero where out of range, and the validity mask.
    """
    n, m = C.shape
    offs = np.arange(-(m - 1), n)                            # key index minus text index
    i0 = np.arange(m)
    j = i0[None, :] + offs[:, None]
    valid = (j >= 0) & (j < n)
    stacked = np.where(valid, C[np.clip(j, 0, n - 1), i0[None, :]], 0.0)
    return stacked, valid


def _windowed_means(stacked: np.ndarray, valid: np.ndarray, half: int):
    """Centered moving means of width 2*half + 1 along axis 1, clipped at edges.

    Only full pairings count: a window mean is kept when every text position in
    the (edge-clipped) window has a key partner, and is -inf otherwise.
    Partial overlaps would average over fewer terms, and a short null average
    has enough variance to drown the aligned signal in the scan maximum.
    """
    m = stacked.shape[1]
    cs = np.concatenate([np.zeros((stacked.shape[0], 1)), np.cumsum(stacked, axis=1)], axis=1)
    cv = np.concatenate([np.zeros((valid.shape[0], 1), dtype=np.int64),
                         np.cumsum(valid, axis=1)], axis=1)
    i = np.arange(m)
    lo = np.maximum(i - half, 0)
    hi = np.minimum(i + half, m - 1) + 1
    sums = cs[:, hi] - cs[:, lo]
    counts = cv[:, hi] - cv[:, lo]
    full = counts == (hi - lo)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(full, sums / np.maximum(counts, 1), -np.inf)
    return means, counts


def scan_profiles_weighted(C_base: np.ndarray, weight_list, B: int) -> list[np.ndarray]:
    """Scan profiles for several per-position weightings of one base score matrix.

    Equivalent to ``scan_profile(C_base * w, B)`` for each ``w`` (None meaning
    unit weights), but the diagonal rearrangement is done once.  Weights apply
    per text position, i.e. per column of the stacked layout.
    """
    if B % 2 != 0:
        raise ValueError("window size B must be even")
    n, m = C_base.shape
    if B > min(n, m):
        raise ValueError(f"window size {B} exceeds sequence lengths ({n}, {m})")
    stacked, valid = _diagonal_stack(C_base)
    out = []
    for w in weight_list:
        sw = stacked if w is None else stacked * np.asarray(w, dtype=np.float64)[None, :]
        means, _ = _windowed_means(sw, valid, B // 2)
        out.append(means.max(axis=0))
    return out


def scan_profile(C: np.ndarray, B: int) -> np.ndarray:
    """Per-text-position scan maxima M_i = max_k phi over center-aligned windows.

    Key window centered at k is paired with the text window centered at i by
    matching offsets; the average runs over the offsets valid on both sides,
    which reproduces the untruncated pairing for interior windows.
    """
    if B % 2 != 0:
        raise ValueError("window size B must be even")
    n, m = C.shape
    if B > min(n, m):
        raise ValueError(f"window size {B} exceeds sequence lengths ({n}, {m})")
    stacked, valid = _diagonal_stack(C)
    means, _ = _windowed_means(stacked, valid, B // 2)
    return means.max(axis=0)


def _scan_grid_max(C: np.ndarray, B: int) -> float:
    """Maximum of phi over the full grid of length-B windows (start-aligned)."""
    n, m = C.shape
    if B > min(n, m):
        raise ValueError(f"window size {B} exceeds sequence lengths ({n}, {m})")
    stacked, valid = _diagonal_stack(C)
    cs = np.concatenate([np.zeros((stacked.shape[0], 1)), np.cumsum(stacked, axis=1)], axis=1)
    cv = np.concatenate([np.zeros((valid.shape[0], 1), dtype=np.int64),
                         np.cumsum(valid, axis=1)], axis=1)
    sums = cs[:, B:] - cs[:, :-B]
    counts = cv[:, B:] - cv[:, :-B]
    full = counts == B
    if not np.any(full):
        raise ValueError("no full-length window alignment exists")
    return float((sums[full] / B).max())


def scan_max(keys, ctx: DetectionContext, B: int, stat: Statistic | str = "ems-base") -> float:
    """Maximum test statistic over all key-window/text-window alignments of length B."""
    if isinstance(stat, str):
        stat = resolve_statistic(stat)
    if stat.separable:
        return _scan_grid_max(stat.pair_scores(keys, ctx), B)
    # non-separable: direct evaluation over the alignment grid
    hits = hit_matrix(keys, ctx.tokens, ctx.mu)
    n, m = hits.shape
    best = -np.inf
    for a in range(n - B + 1):
        for b in range(m - B + 1):
            h = hits[np.arange(a, a + B), np.arange(b, b + B)]
            best = max(best, phi_its_huber(hit=h, mass=ctx.p[b:b + B]))
    return float(best)
