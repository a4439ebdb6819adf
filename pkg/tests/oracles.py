"""Independent oracles shared across the test suite.

The finite-difference harness perturbs raw numpy inputs and re-runs the
forward computation, so it exercises the taped backward rules without
trusting them. BLEU/segmentation brute-force counters live here too.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

FD_STEP = 1e-4
REL_TOL = 1e-4
ABS_FLOOR = 1e-7  # below this magnitude, absolute agreement counts as a pass


def finite_difference_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f w.r.t. every coordinate of x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def grads_close(analytic: np.ndarray, fd: np.ndarray,
                rel_tol: float = REL_TOL, abs_floor: float = ABS_FLOOR) -> bool:
    diff = np.abs(analytic - fd)
    scale = np.maximum(np.abs(analytic), np.abs(fd))
    return bool(np.all((diff <= rel_tol * scale) | (diff <= abs_floor)))


def max_rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    diff = np.abs(analytic - fd)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), ABS_FLOOR)
    return float((diff / scale).max())


def brute_force_window_count(turn_counts: list[int], window: int) -> int:
    """Count (W context turns -> response) examples by explicit enumeration."""
    total = 0
    for H in turn_counts:
        for response_idx in range(1, H + 1):  # 1-based turn index
            first = response_idx - window
            if first >= 1:  # full window must exist
                total += 1
    return total


def brute_force_bleu_precision(candidate: list, reference: list, n: int) -> tuple[int, int]:
    """Clipped n-gram matches and candidate n-gram total, counted naively."""
    cand_grams = [tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1)]
    ref_grams = Counter(tuple(reference[i : i + n]) for i in range(len(reference) - n + 1))
    clipped = 0
    for g, c in Counter(cand_grams).items():
        clipped += min(c, ref_grams[g])
    return clipped, len(cand_grams)


def teacher_forced_log_probs(weights, input_ids, loss_mask) -> list[float]:
    """Per-token log p(x_n | x_1..x_{n-1}) summation, independent of the
    metrics module's pooling (uses only the forward pass and numpy)."""
    from coral import model as M

    logits = M.forward(weights, input_ids[:-1], train_mode=False).data
    out = []
    for pos in range(1, len(input_ids)):
        if not loss_mask[pos]:
            continue
        row = logits[pos - 1]
        row = row - row.max()
        p = np.exp(row) / np.exp(row).sum()
        out.append(float(np.log(p[input_ids[pos]])))
    return out
