"""Central finite-difference checking of analytic gradients.

``finite_diff_check`` perturbs parameter coordinates by +/-eps and
compares (f(+)-f(-))/(2 eps) against the analytic gradient, reporting
|a-n| / max(|a|, |n|, 1e-8) per coordinate.

A coordinate failing at the primary step is re-measured at eps/16 and
eps*32 and the best-resolved error is kept: a relu-kink crossing
vanishes at the smaller step, float64 roundoff noise (which dominates
the quotient when the true gradient is ~1e-8) vanishes at the larger
step, while a genuinely wrong analytic gradient fails at every scale.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError
from .tape import Node


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _numeric(f: Callable[[], float], flat: np.ndarray, idx: int, eps: float) -> float:
    orig = flat[idx]
    flat[idx] = orig + eps
    fp = f()
    flat[idx] = orig - eps
    fm = f()
    flat[idx] = orig
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise NumericError("objective returned a non-finite value during perturbation")
    return (fp - fm) / (2.0 * eps)


def finite_diff_check(
    f: Callable[[], float],
    params: list[tuple[str, Node]],
    analytic: dict[str, np.ndarray],
    eps: float = 1e-5,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients against central differences.

    Args:
        f: deterministic scalar objective evaluated at the current
           parameter values (must not record on any tape).
        params: named parameter nodes; their values are perturbed in
           place and restored.
        analytic: name -> gradient array, same shape as the parameter.
        eps: central-difference step (> 0).
        max_coords_per_param: check only this many randomly chosen
           coordinates per tensor; None checks every coordinate.
        rng: source for coordinate subsampling.

    Returns:
        (max relative error over all checked coordinates,
         per-parameter max relative error)
    """
    if eps <= 0:
        raise NumericError(f"eps must be positive, got {eps}")
    if rng is None:
        rng = np.random.default_rng(0)
    per_param: dict[str, float] = {}
    worst = 0.0
    for name, p in params:
        grad = analytic.get(name)
        if grad is None:
            grad = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        n = flat.shape[0]
        if max_coords_per_param is not None and max_coords_per_param < n:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        p_worst = 0.0
        for idx in coords:
            num = _numeric(f, flat, int(idx), eps)
            err = _rel_err(float(gflat[idx]), num)
            if err > 1e-4:
                # Re-measure at other scales: kink artifacts vanish when
                # the step shrinks, roundoff noise when it grows.
                for eps2 in (eps / 16.0, eps * 32.0):
                    num2 = _numeric(f, flat, int(idx), eps2)
                    err = min(err, _rel_err(float(gflat[idx]), num2))
            p_worst = max(p_worst, err)
        per_param[name] = p_worst
        worst = max(worst, p_worst)
    return worst, per_param
