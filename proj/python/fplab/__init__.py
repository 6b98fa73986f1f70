"""Python bindings for fplab."""

import json
import os

from ._core import (
    IoError,
    add,
    association_spread,
    bit_string,
    decode,
    demo_nonassoc,
    div_index,
    encode,
    exact_decimal,
    mul,
    order_spread,
    parse_decimal,
    reduce,
    round_value,
    sample_std,
)
from . import _core

__all__ = [
    "IoError", "add", "analyze", "association_spread", "bit_string", "decode", "demo_nonassoc", "div_index",
    "encode", "exact_decimal", "golden_run", "greedy_decode", "mul", "order_spread", "parse_decimal", "reduce",
    "round_value", "run_sweep", "sample_std",
]


def greedy_decode(prompt, max_new_tokens, policy="fp32", arch="archA", devices=2, batch_size=8, weight_seed=42):
    """Greedy trace of the default toy model under one runtime configuration."""
    return json.loads(_core._greedy_decode(list(prompt), max_new_tokens, policy, arch, devices, batch_size, weight_seed))


def golden_run(prompt, max_new_tokens, weight_seed=42):
    return json.loads(_core._golden_run(list(prompt), max_new_tokens, weight_seed))


def run_sweep(spec):
    """Run a sweep described by a dict (same keys as the CLI --spec file).

    Returns (reports, cells_run, cells_skipped)."""
    reports, ran, skipped = _core._run_sweep(json.dumps(spec))
    return json.loads(reports), ran, skipped


def analyze(trace_dir, bins=20, export_dir=None):
    return json.loads(_core._analyze(os.fspath(trace_dir), bins, None if export_dir is None else os.fspath(export_dir)))
