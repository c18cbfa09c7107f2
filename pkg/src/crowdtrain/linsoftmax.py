"""Closed-form softmax-regression gradient as a Custom task kind.

This is the demo workload browser volunteers run: small enough to be a few
lines in any language, yet it exercises the full fetch/execute/ack loop.
Every arithmetic step — including exp — is written so that an IEEE-754
double implementation in another language (JavaScript in particular)
produces bit-identical bytes: scalar loops in fixed order, and a portable
exp built only from correctly-rounded +, -, *, /, floor, and powers of two.
"""

from __future__ import annotations

import base64
import json
import math
import struct

from .jobmodel import TaskEnvelope, custom_kind

LINEAR_SOFTMAX_KIND = custom_kind("linear-softmax-grad")

_INV_LN2 = 1.4426950408889634
_LN2 = 0.6931471805599453
# 1/k! for k = 0..12, written as shortest-round-trip doubles; the JS side
# carries the same literals
_EXP_COEFFS = (
    1.0,
    1.0,
    0.5,
    0.16666666666666666,
    0.041666666666666664,
    0.008333333333333333,
    0.001388888888888889,
    0.0001984126984126984,
    2.48015873015873e-05,
    2.7557319223985893e-06,
    2.755731922398589e-07,
    2.505210838544172e-08,
    2.08767569878681e-09,
)


def portable_exp(x: float) -> float:
    """exp(x) from exactly-specified double operations.

    Range-reduce with k = floor(x/ln2 + 0.5), evaluate a fixed Horner
    polynomial in the remainder, scale by 2^k. Each step is a correctly
    rounded IEEE-754 operation, so any conforming runtime agrees bitwise.
    """
    if x != x:  # NaN
        return x
    if x > 709.0:
        return math.inf
    if x < -745.0:
        return 0.0
    k = math.floor(x * _INV_LN2 + 0.5)
    r = x - k * _LN2
    p = _EXP_COEFFS[12]
    for i in range(11, -1, -1):
        p = p * r + _EXP_COEFFS[i]
    return p * math.ldexp(1.0, int(k))


def softmax_gradient(
    weights: list[list[float]], xs: list[list[float]], ys: list[int]
) -> list[list[float]]:
    """d/dW of mean softmax cross-entropy for logits = X @ W.

    All loops run in fixed ascending order; see module docstring.
    """
    n_features = len(weights)
    n_classes = len(weights[0])
    n = len(xs)
    grad = [[0.0] * n_classes for _ in range(n_features)]
    for i in range(n):
        x = xs[i]
        logits = []
        for c in range(n_classes):
            s = 0.0
            for f in range(n_features):
                s += x[f] * weights[f][c]
            logits.append(s)
        m = logits[0]
        for c in range(1, n_classes):
            if logits[c] > m:
                m = logits[c]
        exps = [portable_exp(logits[c] - m) for c in range(n_classes)]
        denom = 0.0
        for c in range(n_classes):
            denom += exps[c]
        for c in range(n_classes):
            p = exps[c] / denom
            d = p - (1.0 if c == ys[i] else 0.0)
            for f in range(n_features):
                grad[f][c] += x[f] * d
    for f in range(n_features):
        for c in range(n_classes):
            grad[f][c] = grad[f][c] / n
    return grad


def floats_to_bytes(rows: list[list[float]]) -> bytes:
    flat = [value for row in rows for value in row]
    return struct.pack(f"<{len(flat)}d", *flat)


def bytes_to_floats(raw: bytes, n_rows: int, n_cols: int) -> list[list[float]]:
    flat = struct.unpack(f"<{n_rows * n_cols}d", raw)
    return [list(flat[r * n_cols : (r + 1) * n_cols]) for r in range(n_rows)]


def build_task(
    task_id: int,
    job_id: str,
    weights: list[list[float]],
    xs: list[list[float]],
    ys: list[int],
    result_key: str,
    max_duration_ms: int = 10_000,
) -> TaskEnvelope:
    n_features = len(weights)
    n_classes = len(weights[0])
    payload = json.dumps(
        {
            "dim_f": n_features,
            "dim_c": n_classes,
            "w_b64": base64.b64encode(floats_to_bytes(weights)).decode("ascii"),
            "x_b64": base64.b64encode(floats_to_bytes(xs)).decode("ascii"),
            "y": ys,
            "result_key": result_key,
        },
        sort_keys=True,
    ).encode("utf-8")
    return TaskEnvelope(
        task_id=task_id,
        job_id=job_id,
        kind=LINEAR_SOFTMAX_KIND,
        payload=payload,
        required_model_version=0,
        max_duration_ms=max_duration_ms,
    )


def run_linear_softmax(task: TaskEnvelope, ctx) -> None:
    """Handler: compute the gradient and store its bytes under result_key."""
    p = json.loads(task.payload.decode("utf-8"))
    n_features, n_classes = p["dim_f"], p["dim_c"]
    weights = bytes_to_floats(base64.b64decode(p["w_b64"]), n_features, n_classes)
    n = len(p["y"])
    xs = bytes_to_floats(base64.b64decode(p["x_b64"]), n, n_features)
    grad = softmax_gradient(weights, xs, p["y"])
    ctx.store.put_plain(p["result_key"], floats_to_bytes(grad))
