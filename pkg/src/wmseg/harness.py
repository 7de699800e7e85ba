"""Experiment runner: the four desk-scale settings on the synthetic Markov LM.

Each replication generates a watermarked sequence (behind a sampled prompt),
applies the setting's attacks, turns the result into a sliding-window p-value
sequence per method, segments it with SeedBS-NOT, and scores the segmentation
against the label-derived truth with the Rand index.  The whole experiment is
a pure function of its configuration: per-replication seeds are derived from
the master seeds and the replication index.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .cpd import BootstrapConfig, ChangePointSet, rand_index, seedbs_not
from .decode import AttackSpec, TokenSeq, apply_attack, generate_plain, generate_watermarked
from .keys import generate_keys
from .lm import MarkovLM
from .rtest import PValueSeq, RandTestConfig, pvalue_sequences
from .stats import STATISTIC_NAMES, DetectionContext, resolve_statistic

__all__ = ["ExperimentConfig", "MethodSpec", "RunResult", "ConfigError",
           "default_methods", "window_rule", "run_setting", "emit_report",
           "results_to_json", "results_from_json"]


class ConfigError(ValueError):
    """Raised when an experiment configuration is inconsistent."""


@dataclass(frozen=True)
class MethodSpec:
    """A detection method: a statistic plus the provenance of its NTPs.

    ``ntp`` is one of 'none' (statistic uses no NTPs), 'oracle' (exact NTPs,
    true prompt context), 'empty' (empty-prompt estimates from the observed
    text), 'mismatched' (empty-prompt estimates from a differently seeded
    model).
    """

    statistic: str
    ntp: str = "none"

    @property
    def label(self) -> str:
        return self.statistic if self.ntp == "none" else f"{self.statistic}/{self.ntp}"


def default_methods(statistic: str) -> MethodSpec:
    """Conventional NTP provenance per statistic: lr = oracle, shrink = empty."""
    ntp = {"ems-lr": "oracle", "ems-shrink": "empty", "its-huber": "oracle"}.get(statistic, "none")
    return MethodSpec(statistic=statistic, ntp=ntp)


@dataclass
class ExperimentConfig:
    setting: int = 3
    scheme: str = "EMS"
    statistic: str = "ems-lr"
    n: int = 500
    V: int = 50
    order: int = 1
    temperature: float = 0.45
    alpha_dirichlet: float = 0.3
    prompt_len: int = 20
    B: int = 20
    block: int = 20            # bootstrap block size B'
    T: int = 99
    Tp: int = 999
    a: float = 2 ** -0.5
    zeta: float = 0.01
    lam: float = 0.5
    R: int = 100
    insert_frac_low: float = 0.8
    insert_pos_jitter: int = 10
    seed_model: int = 1
    seed_keys: int = 2
    seed_nulls: int = 3
    seed_bootstrap: int = 4
    seed_attacks: int = 5
    seed_prompt: int = 6
    seed_mismatch: int = 7

    def validate(self) -> None:
        if self.setting not in (1, 2, 3, 4):
            raise ConfigError(f"setting must be 1..4, got {self.setting}")
        if self.scheme.upper() not in ("EMS", "ITS"):
            raise ConfigError(f"scheme must be EMS or ITS, got {self.scheme!r}")
        if self.statistic not in STATISTIC_NAMES:
            raise ConfigError(f"unknown statistic {self.statistic!r}")
        scheme_prefix = "ems" if self.scheme.upper() == "EMS" else "its"
        if not self.statistic.startswith(scheme_prefix):
            raise ConfigError(f"statistic {self.statistic!r} does not match scheme {self.scheme}")
        if self.n < 8 or self.V < 2:
            raise ConfigError("need n >= 8 and V >= 2")
        if self.B % 2 != 0 or self.B < 2 or self.B > self.n:
            raise ConfigError(f"B must be even and in [2, n], got {self.B}")
        if self.block < 1 or self.T < 1 or self.Tp < 1 or self.R < 1:
            raise ConfigError("block, T, Tp and R must be positive")
        if not 0.5 <= self.a < 1:
            raise ConfigError(f"decay parameter a must lie in [1/2, 1), got {self.a}")
        if not 0 < self.zeta < 1 or not 0 < self.lam < 1:
            raise ConfigError("zeta and lam must lie in (0, 1)")
        if not 0 < self.insert_frac_low <= 1:
            raise ConfigError("insert_frac_low must lie in (0, 1]")


@dataclass
class RunResult:
    rep: int
    method: str
    truth: ChangePointSet
    detected: ChangePointSet
    rand: float
    pvalues: PValueSeq
    wall_time: float = 0.0


def window_rule(n: int) -> int:
    """Window size floor(3 n^(1/3)), rounded down to the nearest even integer >= 2."""
    if n < 8:
        raise ValueError("n must be at least 8")
    # guard the cube root against representation error (1000 ** (1/3) < 10)
    b = int(np.floor(3.0 * n ** (1.0 / 3.0) + 1e-9))
    return max(b - (b % 2), 2)


def _derive_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, np.uint64)[0])


def _setting_attacks(config: ExperimentConfig, rng) -> list[AttackSpec]:
    n = config.n
    if config.setting == 1:
        return []
    lo = config.insert_frac_low

    def jitter(pos):
        j = config.insert_pos_jitter
        return int(rng.integers(pos - j, pos + j + 1)) if j > 0 else pos

    if config.setting == 2:
        length = int(rng.integers(int(lo * n / 2), n // 2 + 1))
        return [AttackSpec("insertion", jitter(n // 2 + 1), length)]
    if config.setting == 3:
        return [AttackSpec("substitution", 2 * n // 5 + 1, n // 5)]
    # setting 4: substitution on the second fifth, then an insertion
    length = int(rng.integers(int(lo * n / 5), n // 5 + 1))
    return [AttackSpec("substitution", n // 5 + 1, n // 5),
            AttackSpec("insertion", jitter(3 * n // 5 + 1), length)]


class _PrefixContextSource:
    """View of a source whose context is always prefixed by a fixed prompt."""

    def __init__(self, source, prompt):
        self.source = source
        self.prompt = list(prompt)
        self.V = source.V

    def next_distribution(self, context):
        return self.source.next_distribution(self.prompt + list(context))


def _detection_context(mode: str, tokens, model, prompt, mismatched_model) -> DetectionContext:
    if mode == "none":
        return DetectionContext(tokens=np.asarray(tokens, dtype=np.int64), V=model.V)
    if mode == "oracle":
        return DetectionContext.from_source(_PrefixContextSource(model, prompt), tokens,
                                            need_mu=True)
    if mode == "empty":
        return DetectionContext.from_source(model, tokens, need_mu=True)
    if mode == "mismatched":
        return DetectionContext.from_source(mismatched_model, tokens, need_mu=True)
    raise ConfigError(f"unknown NTP mode {mode!r}")


def run_setting(config: ExperimentConfig, methods: list[MethodSpec] | None = None,
                progress=None) -> list[RunResult]:
    """Run R independent replications of the configured setting.

    Several methods share each replication's text, keys, null key streams and
    bootstrap draws, which is what makes per-seed method comparisons paired.
    """
    config.validate()
    if methods is None:
        methods = [default_methods(config.statistic)]
    model = MarkovLM(config.V, order=config.order, temperature=config.temperature,
                     seed=config.seed_model, alpha=config.alpha_dirichlet)
    mismatched = MarkovLM(config.V, order=config.order, temperature=config.temperature,
                          seed=config.seed_mismatch, alpha=config.alpha_dirichlet)
    results: list[RunResult] = []
    for rep in range(config.R):
        t0 = time.perf_counter()
        prompt = generate_plain(model, config.prompt_len,
                                seed=_derive_seed(config.seed_prompt, rep)).tokens
        keys = generate_keys(config.scheme, config.n, config.V,
                             _derive_seed(config.seed_keys, rep))
        src = _PrefixContextSource(model, prompt)
        text = generate_watermarked(src, keys, config.n)
        attack_rng = np.random.default_rng(_derive_seed(config.seed_attacks, rep))
        for spec in _setting_attacks(config, attack_rng):
            text = apply_attack(text, spec, src, keys, rng=attack_rng)
        truth = ChangePointSet(points=text.true_change_points(), m=len(text))

        ctx_cache: dict[str, DetectionContext] = {}
        pairs = []
        for ms in methods:
            if ms.ntp not in ctx_cache:
                ctx_cache[ms.ntp] = _detection_context(ms.ntp, text.tokens, model,
                                                       prompt, mismatched)
            pairs.append((resolve_statistic(ms.statistic, lam=config.lam),
                          ctx_cache[ms.ntp]))

        rconf = RandTestConfig(T=config.T, statistic=config.statistic,
                               seed=_derive_seed(config.seed_nulls, rep))
        seqs = pvalue_sequences(keys, config.B, rconf, pairs)
        boot = BootstrapConfig(block=config.block, T=config.Tp,
                               seed=_derive_seed(config.seed_bootstrap, rep))
        elapsed = time.perf_counter() - t0
        for ms, seq in zip(methods, seqs):
            t1 = time.perf_counter()
            detected, _ = seedbs_not(seq, a=config.a, zeta=config.zeta, bootstrap=boot)
            ri = rand_index(truth, detected)
            results.append(RunResult(rep=rep, method=ms.label, truth=truth,
                                     detected=detected, rand=ri, pvalues=seq,
                                     wall_time=elapsed + time.perf_counter() - t1))
        if progress is not None:
            progress(rep, results)
    return results


def emit_report(results: list[RunResult], outdir, config: ExperimentConfig | None = None) -> None:
    """Write plot-ready CSVs: per-replication summary, p-value traces, change points.

    Output is a deterministic function of the results (wall times are not
    serialized), so re-running the same configuration reproduces the bytes.
    """
    import os
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "method", "rand_index", "n_detected", "n_true"])
        for r in results:
            w.writerow([r.rep, r.method, repr(r.rand), len(r.detected), len(r.truth)])
    with open(os.path.join(outdir, "pvalues.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "method", "position", "numerator", "T"])
        for r in results:
            for i, num in enumerate(r.pvalues.numerators, start=1):
                w.writerow([r.rep, r.method, i, int(num), r.pvalues.T])
    with open(os.path.join(outdir, "changepoints.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rep", "method", "kind", "index"])
        for r in results:
            for c in r.truth.points:
                w.writerow([r.rep, r.method, "true", int(c)])
            for c in r.detected.points:
                w.writerow([r.rep, r.method, "detected", int(c)])
    if config is not None:
        with open(os.path.join(outdir, "config.json"), "w") as fh:
            json.dump(asdict(config), fh, indent=2, sort_keys=True)
            fh.write("\n")


def results_to_json(results: list[RunResult], path) -> None:
    out = []
    for r in results:
        out.append({"rep": r.rep, "method": r.method,
                    "truth": [int(c) for c in r.truth.points],
                    "detected": [int(c) for c in r.detected.points],
                    "m": r.truth.m, "rand": r.rand,
                    "pvalues": [int(x) for x in r.pvalues.numerators],
                    "T": r.pvalues.T, "B": r.pvalues.B,
                    "statistic": r.pvalues.statistic})
    with open(path, "w") as fh:
        json.dump(out, fh)
        fh.write("\n")


def results_from_json(path) -> list[RunResult]:
    with open(path) as fh:
        raw = json.load(fh)
    results = []
    for o in raw:
        results.append(RunResult(
            rep=o["rep"], method=o["method"],
            truth=ChangePointSet(points=np.array(o["truth"], dtype=np.int64), m=o["m"]),
            detected=ChangePointSet(points=np.array(o["detected"], dtype=np.int64), m=o["m"]),
            rand=o["rand"],
            pvalues=PValueSeq(numerators=np.array(o["pvalues"]), T=o["T"], B=o["B"],
                              statistic=o.get("statistic", ""))))
    return results
