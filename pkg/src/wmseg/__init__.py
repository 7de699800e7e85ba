"""Watermark embedding, adaptive detection, and segmentation of partially
watermarked token sequences."""

from .lm import MarkovLM, TraceSource, NTPTraceRecord, read_trace, write_trace
from .keys import generate_keys, generate_null_keys
from .decode import (TokenSeq, AttackSpec, decode_ems, decode_its,
                     generate_watermarked, generate_plain, apply_attack)
from .stats import (DetectionContext, resolve_statistic, lr_weights, shrink_ntp,
                    phi_ems, phi_its, phi_its_huber, its_evidence, scan_max,
                    STATISTIC_NAMES)
from .rtest import RandTestConfig, PValueSeq, randomization_pvalue, pvalue_sequence
from .cpd import (Interval, BootstrapConfig, ChangePointSet, ks_stat, best_split,
                  block_bootstrap_pvalue, seeded_intervals, seedbs_not, rand_index)
from .harness import ExperimentConfig, MethodSpec, RunResult, run_setting, window_rule, emit_report

__version__ = "0.1.0"
