"""Central finite-difference gradient verification.

Used by the test suite and by the ``gradcheck`` CLI subcommand. Checks are
run in float64; the comparison is relative with an absolute floor so that
near-zero gradients do not blow up the ratio.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor


def numeric_gradient(f: Callable[[], Tensor], param: Tensor, indices, h: float = 1e-3) -> np.ndarray:
    """Central differences of a scalar-valued closure w.r.t. selected entries.

    Parameters
    ----------
    f : callable
        Re-evaluates the loss from current parameter values.
    param : Tensor
        The parameter to perturb (in place).
    indices : sequence of flat indices into ``param.data``.
    h : float
        Step size.
    """
    flat = param.data.reshape(-1)
    out = np.empty(len(indices), dtype=np.float64)
    for n, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        out[n] = (fp - fm) / (2.0 * h)
    return out


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: list[Tensor],
    n_samples: int = 50,
    h: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    seed: int = 0,
) -> tuple[bool, float]:
    """Compare analytic and finite-difference gradients on sampled entries.

    Returns (all_ok, worst_relative_error). The analytic gradient comes from
    one backward pass; ``n_samples`` entries are drawn across all parameters
    proportionally to their size.
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    n = min(n_samples, total)
    chosen = rng.choice(total, size=n, replace=False)

    worst = 0.0
    ok = True
    bounds = np.cumsum(sizes)
    for flat_idx in chosen:
        pi = int(np.searchsorted(bounds, flat_idx, side="right"))
        local = int(flat_idx - (bounds[pi - 1] if pi else 0))
        num = numeric_gradient(build_loss, params[pi], [local], h=h)[0]
        ana = float(analytic[pi].reshape(-1)[local])
        err = abs(ana - num) / max(abs(num), abs(ana), atol / rtol)
        worst = max(worst, err)
        if err > rtol:
            ok = False
    return ok, worst
