"""Command-line interface.

Subcommands cover the full pipeline: generate watermarked text, attack it,
run a global detection test, compute the windowed p-value sequence, segment
it, or run a whole experiment setting and emit report CSVs.  Flags mirror the
experiment configuration fields; a flat key=value config file can supply
defaults that flags override.  Exit code 2 signals a validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .cpd import BootstrapConfig, rand_index, seedbs_not, write_changepoints
from .decode import AttackSpec, apply_attack, generate_plain, generate_watermarked, read_tokenseq, write_tokenseq
from .harness import (ConfigError, ExperimentConfig, MethodSpec, default_methods,
                      emit_report, results_from_json, results_to_json, run_setting)
from .keys import generate_keys, read_key_file, write_key_file
from .lm import MarkovLM, TraceSource
from .rtest import RandTestConfig, pvalue_sequence, randomization_pvalue, read_pvalseq, write_pvalseq
from .stats import STATISTIC_NAMES, DetectionContext, resolve_statistic


def _read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def _coerce(value: str, typ):
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    return value


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    fields = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    types = {name: type(getattr(cfg, name)) for name in fields}
    if getattr(args, "config", None):
        for k, v in _read_config_file(args.config).items():
            if k not in fields:
                raise ConfigError(f"unknown config key {k!r}")
            setattr(cfg, k, _coerce(v, types[k]))
    for name in fields:
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    cfg.validate()
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file (flags override)")
    cfg = ExperimentConfig()
    for f in dataclasses.fields(ExperimentConfig):
        typ = type(getattr(cfg, f.name))
        p.add_argument(f"--{f.name.lower().replace('_', '-')}", dest=f.name, type=typ,
                       default=None, help=f"(default {getattr(cfg, f.name)})")


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--v", type=int, default=50, help="vocabulary size")
    p.add_argument("--order", type=int, default=1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--model-seed", type=int, default=1)


def _model_from(args) -> MarkovLM:
    return MarkovLM(args.v, order=args.order, temperature=args.temperature,
                    seed=args.model_seed)


def _context(args, model, tokens) -> DetectionContext:
    if getattr(args, "trace", None):
        source = TraceSource.from_file(args.trace)
    else:
        source = model
    return DetectionContext.from_source(source, tokens, need_mu=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wmseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate watermarked (or plain) text")
    _model_args(p)
    p.add_argument("--scheme", choices=["EMS", "ITS", "plain"], default="EMS")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--key-seed", type=int, default=2)
    p.add_argument("--sample-seed", type=int, default=0, help="seed for plain sampling")
    p.add_argument("--prompt-len", type=int, default=0)
    p.add_argument("--prompt-seed", type=int, default=6)
    p.add_argument("--out-text", required=True)
    p.add_argument("--out-keys")

    p = sub.add_parser("attack", help="apply an insertion or substitution attack")
    _model_args(p)
    p.add_argument("--text", required=True)
    p.add_argument("--keys", help="key file (required for substitution)")
    p.add_argument("--kind", choices=["insertion", "substitution"], required=True)
    p.add_argument("--position", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--attack-seed", type=int, default=5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="global randomization test p-value")
    _model_args(p)
    p.add_argument("--text", required=True)
    p.add_argument("--keys", required=True)
    p.add_argument("--statistic", choices=STATISTIC_NAMES, default="ems-lr")
    p.add_argument("--t", type=int, default=999, dest="T")
    p.add_argument("--null-seed", type=int, default=3)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--trace", help="NTP trace file to use instead of the Markov model")

    p = sub.add_parser("pvalseq", help="sliding-window p-value sequence")
    _model_args(p)
    p.add_argument("--text", required=True)
    p.add_argument("--keys", required=True)
    p.add_argument("--statistic", choices=STATISTIC_NAMES, default="ems-lr")
    p.add_argument("--b", type=int, default=20, dest="B")
    p.add_argument("--t", type=int, default=99, dest="T")
    p.add_argument("--null-seed", type=int, default=3)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--trace")
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="SeedBS-NOT segmentation of a p-value sequence")
    p.add_argument("--pvalues", required=True)
    p.add_argument("--a", type=float, default=2 ** -0.5)
    p.add_argument("--zeta", type=float, default=0.01)
    p.add_argument("--block", type=int, default=None)
    p.add_argument("--tp", type=int, default=999, dest="Tp")
    p.add_argument("--bootstrap-seed", type=int, default=4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="run one setting end to end")
    _add_config_flags(p)
    p.add_argument("--methods", help="comma-separated statistic[:ntp] list")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.add_argument("--results-json", help="also dump raw results as JSON")

    p = sub.add_parser("report", help="re-emit CSVs from saved raw results")
    p.add_argument("--results-json", required=True)
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "generate":
        model = _model_from(args)
        prompt = None
        if args.prompt_len > 0:
            prompt = generate_plain(model, args.prompt_len, seed=args.prompt_seed)
        if args.scheme == "plain":
            text = generate_plain(model, args.n, prompt=prompt, seed=args.sample_seed)
        else:
            keys = generate_keys(args.scheme, args.n, args.v, args.key_seed)
            text = generate_watermarked(model, keys, args.n, prompt=prompt)
            if args.out_keys:
                write_key_file(keys, args.out_keys)
        write_tokenseq(text, args.out_text, args.v)
        return 0

    if cmd == "attack":
        text, V = read_tokenseq(args.text)
        model = _model_from(args)
        keys = read_key_file(args.keys) if args.keys else None
        spec = AttackSpec(args.kind, args.position, args.length)
        out = apply_attack(text, spec, model, keys, seed=args.attack_seed)
        write_tokenseq(out, args.out, V)
        return 0

    if cmd == "detect":
        text, _ = read_tokenseq(args.text)
        keys = read_key_file(args.keys)
        model = _model_from(args)
        ctx = _context(args, model, text.tokens)
        stat = resolve_statistic(args.statistic, lam=args.lam)
        conf = RandTestConfig(T=args.T, statistic=args.statistic, seed=args.null_seed)
        pval = randomization_pvalue(keys, ctx, conf, stat)
        print(f"p-value: {pval}")
        return 0

    if cmd == "pvalseq":
        text, _ = read_tokenseq(args.text)
        keys = read_key_file(args.keys)
        model = _model_from(args)
        ctx = _context(args, model, text.tokens)
        stat = resolve_statistic(args.statistic, lam=args.lam)
        conf = RandTestConfig(T=args.T, statistic=args.statistic, seed=args.null_seed)
        seq = pvalue_sequence(keys, ctx, args.B, conf, stat)
        write_pvalseq(seq, args.out)
        return 0

    if cmd == "segment":
        seq = read_pvalseq(args.pvalues)
        block = args.block if args.block is not None else seq.B
        boot = BootstrapConfig(block=block, T=args.Tp, seed=args.bootstrap_seed)
        cps, diags = seedbs_not(seq, a=args.a, zeta=args.zeta, bootstrap=boot)
        write_changepoints(cps, args.out)
        for d in diags:
            if d.selected:
                print(f"change point {d.tau_hat + 1} from interval ({d.r}, {d.s}] "
                      f"(S = {d.S:.4f}, p~ = {d.p_tilde})")
        if len(cps) == 0:
            print("no change points detected")
        return 0

    if cmd == "experiment":
        cfg = _build_config(args)
        if args.methods:
            methods = []
            for item in args.methods.split(","):
                name, _, ntp = item.partition(":")
                if name not in STATISTIC_NAMES:
                    raise ConfigError(f"unknown statistic {name!r}")
                methods.append(MethodSpec(name, ntp) if ntp else default_methods(name))
        else:
            methods = None
        results = run_setting(cfg, methods)
        emit_report(results, args.out, cfg)
        if args.results_json:
            results_to_json(results, args.results_json)
        by_method: dict[str, list[float]] = {}
        for r in results:
            by_method.setdefault(r.method, []).append(r.rand)
        for method, vals in by_method.items():
            print(f"{method}: median Rand index {np.median(vals):.4f} over {len(vals)} reps")
        return 0

    if cmd == "report":
        results = results_from_json(args.results_json)
        emit_report(results, args.out)
        return 0

    raise ConfigError(f"unknown command {cmd!r}")


if __name__ == "__main__":
    sys.exit(main())
