"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, ShapeError, Tensor

# breakpoints of the piecewise-linear ops
_KINKS = {"relu": (0.0,), "relu6": (0.0, 6.0)}


def _pattern(tape: GradTape) -> list[np.ndarray]:
    """Which side of each breakpoint every piecewise-linear input lies on."""
    return [r.inputs[0].data > k for r in tape.records if r.op in _KINKS for k in _KINKS[r.op]]


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


@contextmanager
def _promoted(inputs: Sequence[Tensor], dtype):
    saved = [t.data for t in inputs]
    try:
        if dtype is not None:
            for t in inputs:
                t.data = np.ascontiguousarray(t.data, dtype=dtype).copy()
        yield
    finally:
        for t, d in zip(inputs, saved):
            t.data = d


def fd_gradient_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-3,
                      n_coords: int = 20, seed: int = 0, atol: float = 1e-5,
                      dtype=np.float64, max_resample: int = 200) -> float:
    """Return the worst per-coordinate error between analytic and numeric gradients.

    ``f(*inputs)`` must return a scalar tensor. Up to ``n_coords`` coordinates
    are sampled per input. Each coordinate's error is
    ``|a - n| / max(|a|, |n|)``, falling back to ``|a - n|`` when both
    magnitudes are below ``atol``.

    By default the inputs are promoted to float64 for the duration of the
    check, so the comparison measures the backward rules rather than float32
    rounding in the difference quotient. Pass ``dtype=None`` to check in the
    inputs' own precision. Steps down to 1e-7 are accepted in 64-bit mode;
    32-bit checks need at least 1e-4.

    A coordinate is only scored where ``f`` is smooth over the whole step:
    if perturbing it moves any relu/relu6 input across a breakpoint, or the
    one-sided differences disagree, it is replaced by a fresh draw.
    """
    wide = dtype is not None and np.dtype(dtype).itemsize >= 8
    low = 1e-7 if wide else 1e-4
    if not low <= epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in [{low:g}, 1e-2] at this precision, got {epsilon}")
    with _promoted(inputs, dtype):
        for t in inputs:
            t.requires_grad = True
            t.grad = None
        with GradTape() as tape:
            out = f(*inputs)
        if out.data.size != 1:
            raise ShapeError(f"fd_gradient_check needs a scalar function, got output shape {out.shape}")
        grads = tape.backward(out) if len(tape) else {}
        center = out.item()
        center_pattern = _pattern(tape)

        def probe() -> tuple[float, bool]:
            with GradTape() as t:
                value = f(*inputs).item()
            return value, _same_pattern(_pattern(t), center_pattern)

        rng = np.random.default_rng(seed)
        worst = 0.0
        for t in inputs:
            analytic = grads.get(t, np.zeros_like(t.data)).reshape(-1)
            flat = t.data.reshape(-1)
            order = rng.permutation(flat.size)
            want = min(n_coords, flat.size)
            checked = 0
            for idx in order[: want + max_resample]:
                if checked == want:
                    break
                orig = flat[idx].copy()
                flat[idx] = orig + epsilon
                hi = flat[idx].copy()
                plus, smooth_hi = probe()
                flat[idx] = orig - epsilon
                lo = flat[idx].copy()
                minus, smooth_lo = probe()
                flat[idx] = orig
                if not (smooth_hi and smooth_lo):
                    continue
                fwd = (plus - center) / float(hi - orig)
                bwd = (center - minus) / float(orig - lo)
                if abs(fwd - bwd) > max(0.1 * max(abs(fwd), abs(bwd)), 100 * atol):
                    continue
                # the stored step differs from epsilon after rounding
                numeric = (plus - minus) / float(hi - lo)
                a = float(analytic[idx])
                scale = max(abs(a), abs(numeric))
                err = abs(a - numeric) if scale < atol else abs(a - numeric) / scale
                worst = max(worst, err)
                checked += 1
            if checked < want:
                raise ValueError(f"only {checked} of {want} sampled coordinates of an input shaped "
                                 f"{t.shape} were away from kinks; move the check point")
        for t in inputs:
            t.grad = None
    return worst
