"""Instrumented forward passes for the four layer families.

Each benchmark executes the core mixing operation of its layer type on
random inputs while counting the arithmetic actually performed (multiply-
accumulates from the executed shapes, plus elementwise work), so measured
counts can be compared against the leading-term complexity model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import LAYER_TYPES, complexity_estimate
from .errors import ConfigError


@dataclass
class BenchRow:
    layer_type: str
    n: int
    d: int
    f: int
    predicted_ops: int
    measured_ops: int
    seconds: float


def _self_attention_ops(x: np.ndarray) -> tuple[np.ndarray, int]:
    n, d = x.shape
    ops = 0
    scores = x @ x.T  # stand-in q/k of the same width
    ops += n * n * d
    scores = scores / np.sqrt(d)
    ops += n * n
    shifted = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    weights /= weights.sum(axis=-1, keepdims=True)
    ops += 3 * n * n
    out = weights @ x
    ops += n * n * d
    return out, ops


def _recurrent_ops(x: np.ndarray, rng) -> tuple[np.ndarray, int]:
    n, d = x.shape
    w_h = rng.normal(size=(d, d)).astype(x.dtype)
    w_x = rng.normal(size=(d, d)).astype(x.dtype)
    h = np.zeros(d, dtype=x.dtype)
    ops = 0
    for t in range(n):
        h = np.tanh(w_h @ h + w_x @ x[t])
        ops += 2 * d * d + 2 * d
    return h, ops


def _convolution_ops(x: np.ndarray, f: int, rng) -> tuple[np.ndarray, int]:
    n, d = x.shape
    kernel = rng.normal(size=(f, d, d)).astype(x.dtype)
    out = np.zeros_like(x)
    ops = 0
    for j in range(f):
        shifted = x[: n - j] if j else x
        out[j:] += shifted @ kernel[j]
        ops += shifted.shape[0] * d * d
    return out, ops


def _depthwise_ops(x: np.ndarray, f: int, rng) -> tuple[np.ndarray, int]:
    n, d = x.shape
    kernel = rng.normal(size=(f, d)).astype(x.dtype)
    out = np.zeros_like(x)
    ops = 0
    for j in range(f):
        shifted = x[: n - j] if j else x
        out[j:] += kernel[j] * shifted
        ops += shifted.shape[0] * d
    return out, ops


def measure_layer(layer_type: str, n: int, d: int, f: int = 3, seed: int = 0) -> BenchRow:
    if layer_type not in LAYER_TYPES:
        raise ConfigError(f"unknown layer type {layer_type!r}")
    rng = np.random.default_rng((seed, n, d, f))
    x = rng.normal(size=(n, d)).astype(np.float32)
    start = time.perf_counter()
    if layer_type == "self_attention":
        _, ops = _self_attention_ops(x)
    elif layer_type == "recurrent":
        _, ops = _recurrent_ops(x, rng)
    elif layer_type == "convolution":
        _, ops = _convolution_ops(x, f, rng)
    else:
        _, ops = _depthwise_ops(x, f, rng)
    seconds = time.perf_counter() - start
    predicted = complexity_estimate(layer_type, n, d, f).per_layer_ops
    return BenchRow(layer_type, n, d, f, predicted, ops, seconds)


def bench_table(n_list, d_list, f_list, seed: int = 0) -> list[BenchRow]:
    if not n_list or not d_list or not f_list:
        raise ConfigError("bench needs nonempty n, d, and f lists")
    rows = []
    for layer_type in LAYER_TYPES:
        for n in n_list:
            for d in d_list:
                for f in f_list:
                    rows.append(measure_layer(layer_type, n, d, f, seed))
    return rows


@dataclass
class ScalingCheck:
    layer_type: str
    variable: str  # which of n/d/f doubled
    low: int
    high: int
    predicted_ratio: float
    measured_ratio: float
    deviation: float  # |measured - predicted| / predicted
    flagged: bool  # deviates by more than 25%


def scaling_checks(rows: list[BenchRow], threshold: float = 0.25) -> list[ScalingCheck]:
    """Compare measured op-count ratios against predicted ratios for each
    pair of rows where exactly one of n, d, f steps to its next grid value."""
    by_key = {(r.layer_type, r.n, r.d, r.f): r for r in rows}

    def next_up(layer, n, d, f, variable):
        candidates = [
            key
            for key in by_key
            if key[0] == layer
            and all(
                key[i] == base
                for i, base in ((1, n), (2, d), (3, f))
                if "ndf"[i - 1] != variable
            )
            and key["ndf".index(variable) + 1] > (n, d, f)["ndf".index(variable)]
        ]
        return by_key[min(candidates)] if candidates else None

    checks = []
    for (layer, n, d, f), row in sorted(by_key.items()):
        for variable in "ndf":
            hi = next_up(layer, n, d, f, variable)
            if hi is None:
                continue
            predicted = hi.predicted_ops / row.predicted_ops
            measured = hi.measured_ops / row.measured_ops
            deviation = abs(measured - predicted) / predicted
            checks.append(
                ScalingCheck(
                    layer_type=layer,
                    variable=variable,
                    low={"n": n, "d": d, "f": f}[variable],
                    high={"n": hi.n, "d": hi.d, "f": hi.f}[variable],
                    predicted_ratio=predicted,
                    measured_ratio=measured,
                    deviation=deviation,
                    flagged=deviation > threshold,
                )
            )
    return checks


def format_table(rows: list[BenchRow], checks: list[ScalingCheck]) -> str:
    lines = [
        f"{'layer':<34}{'n':>6}{'d':>6}{'f':>4}{'predicted':>14}{'measured':>14}{'seconds':>12}"
    ]
    for r in rows:
        lines.append(
            f"{r.layer_type:<34}{r.n:>6}{r.d:>6}{r.f:>4}"
            f"{r.predicted_ops:>14}{r.measured_ops:>14}{r.seconds:>12.6f}"
        )
    lines.append("")
    lines.append("scaling checks (measured vs predicted ratio when a variable grows):")
    for c in checks:
        flag = "  ** deviates >25%" if c.flagged else ""
        lines.append(
            f"  {c.layer_type:<34}{c.variable} {c.low}->{c.high}: "
            f"measured x{c.measured_ratio:.3f} vs predicted x{c.predicted_ratio:.3f}{flag}"
        )
    return "\n".join(lines)
