"""Shared test oracles, independent of the autodiff graph they check."""

from __future__ import annotations

import numpy as np


def finite_difference(loss_fn, param_data: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one array.

    `loss_fn` must rebuild the computation from scratch on each call and
    return a python float; `param_data` is mutated in place and restored.
    """
    grad = np.zeros_like(param_data)
    flat = param_data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray,
                      rtol: float = 1e-4, atol: float = 1e-8, label: str = ""):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol,
                               err_msg=f"gradient mismatch {label}")


def brute_force_spans(tags: list[str]) -> set[tuple[int, int, str]]:
    """Enumerate entity spans by scanning every start position; repairs
    I-after-O the same way the production rule states, but via an
    independent position-by-position walk."""
    fixed = []
    prev_type = None
    for t in tags:
        if t.startswith("I-") and prev_type != t[2:]:
            t = "B-" + t[2:]
        prev_type = t[2:] if t != "O" else None
        fixed.append(t)
    spans = set()
    i = 0
    while i < len(fixed):
        if fixed[i].startswith("B-"):
            etype = fixed[i][2:]
            j = i + 1
            while j < len(fixed) and fixed[j] == "I-" + etype:
                j += 1
            spans.add((i, j, etype))
            i = j
        else:
            i += 1
    return spans


def brute_force_span_f1(pred: list[list[str]], gold: list[list[str]]):
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        ps, gs = brute_force_spans(p), brute_force_spans(g)
        tp += len(ps & gs)
        fp += len(ps - gs)
        fn += len(gs - ps)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1
