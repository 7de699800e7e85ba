"""Command-line interface: pipeline subcommands and config handling."""

import json

import numpy as np
import pytest

from wmseg.cli import main
from wmseg.cpd import read_changepoints
from wmseg.decode import read_tokenseq
from wmseg.rtest import read_pvalseq


def test_generate_writes_text_and_keys(tmp_path):
    text = tmp_path / "text.toks"
    keys = tmp_path / "keys.json"
    rc = main(["generate", "--v", "20", "--n", "50", "--out-text", str(text),
               "--out-keys", str(keys)])
    assert rc == 0
    seq, V = read_tokenseq(text)
    assert V == 20 and len(seq) == 50
    assert seq.labels.all()


def test_generate_plain_text(tmp_path):
    text = tmp_path / "plain.toks"
    rc = main(["generate", "--scheme", "plain", "--v", "15", "--n", "40",
               "--out-text", str(text)])
    assert rc == 0
    seq, _ = read_tokenseq(text)
    assert not seq.labels.any()


def _generate(tmp_path, n=80, V=20):
    text = tmp_path / "text.toks"
    keys = tmp_path / "keys.json"
    main(["generate", "--v", str(V), "--n", str(n), "--out-text", str(text),
          "--out-keys", str(keys)])
    return text, keys


def test_attack_then_detect(tmp_path, capsys):
    text, keys = _generate(tmp_path)
    attacked = tmp_path / "attacked.toks"
    rc = main(["attack", "--text", str(text), "--keys", str(keys), "--v", "20",
               "--kind", "insertion", "--position", "41", "--length", "20",
               "--out", str(attacked)])
    assert rc == 0
    seq, _ = read_tokenseq(attacked)
    assert len(seq) == 100

    rc = main(["detect", "--text", str(text), "--keys", str(keys), "--v", "20",
               "--t", "99"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "p-value: 0.01" in out


def test_pvalseq_and_segment(tmp_path):
    text, keys = _generate(tmp_path, n=120)
    pseq = tmp_path / "pvals.seq"
    rc = main(["pvalseq", "--text", str(text), "--keys", str(keys), "--v", "20",
               "--b", "10", "--t", "19", "--out", str(pseq)])
    assert rc == 0
    seq = read_pvalseq(pseq)
    assert seq.m == 120 and seq.B == 10

    cps = tmp_path / "cps.json"
    rc = main(["segment", "--pvalues", str(pseq), "--tp", "199", "--out", str(cps)])
    assert rc == 0
    got = read_changepoints(cps)
    assert got.m == 120  # fully watermarked text: ideally nothing detected


def test_experiment_and_report(tmp_path):
    outdir = tmp_path / "out"
    rj = tmp_path / "results.json"
    rc = main(["experiment", "--setting", "3", "--n", "100", "--v", "20",
               "--b", "10", "--block", "10", "--t", "19", "--tp", "199",
               "--r", "1", "--prompt-len", "5", "--methods", "ems-lr",
               "--out", str(outdir), "--results-json", str(rj)])
    assert rc == 0
    assert (outdir / "summary.csv").exists()
    assert (outdir / "config.json").exists()
    cfg = json.loads((outdir / "config.json").read_text())
    assert cfg["n"] == 100 and cfg["setting"] == 3

    outdir2 = tmp_path / "out2"
    rc = main(["report", "--results-json", str(rj), "--out", str(outdir2)])
    assert rc == 0
    assert (outdir2 / "summary.csv").read_bytes() == (outdir / "summary.csv").read_bytes()


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "exp.conf"
    conf.write_text("setting = 1\nn = 100\nV = 20\nB = 10\nblock = 10\n"
                    "T = 19\nTp = 199\nR = 1\nprompt_len = 5\n# comment\n")
    outdir = tmp_path / "out"
    rc = main(["experiment", "--config", str(conf), "--setting", "3",
               "--out", str(outdir)])
    assert rc == 0
    cfg = json.loads((outdir / "config.json").read_text())
    assert cfg["setting"] == 3       # flag wins
    assert cfg["n"] == 100           # file value kept


def test_validation_error_exits_2(tmp_path):
    rc = main(["experiment", "--setting", "9", "--out", str(tmp_path / "x")])
    assert rc == 2


def test_unknown_config_key_exits_2(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("not_a_key = 1\n")
    rc = main(["experiment", "--config", str(conf), "--out", str(tmp_path / "x")])
    assert rc == 2
