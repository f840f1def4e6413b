"""Central finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    errors: Dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.errors.values())

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        lines.append(f"max={self.max_error:.3e} tol={self.tol:g} {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def numeric_grad(f: Callable[[], Tensor], p: Tensor, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f().item()
        flat[i] = orig - step
        f_minus = f().item()
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Worst absolute discrepancy scaled by the larger gradient magnitude.

    The floor keeps parameters whose true gradient is exactly zero (a bias
    followed by a batch norm, say) from dividing round-off by round-off.
    ``fd_check`` sets it from the round-off level of the difference quotient.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def fd_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    names: Optional[Sequence[str]] = None,
    analytic: Optional[Sequence[np.ndarray]] = None,
) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``f()`` against central differences.

    ``f`` must re-read parameter data on every call. ``analytic`` overrides the
    backprop gradients (used for negative controls).
    """
    if names is None:
        names = [getattr(p, "name", "") or f"param{i}" for i, p in enumerate(params)]
    value = f()
    if analytic is None:
        for p in params:
            p.grad = None
        value.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    # a central difference cannot resolve slopes below eps*|f|/step; the factor
    # 10 allows for intermediate sums larger than |f| itself
    roundoff = 10 * np.finfo(np.float64).eps * max(abs(value.item()), 1.0) / step
    floor = max(1e-8, roundoff / tol)
    report = GradCheckReport(tol=tol)
    for name, p, a in zip(names, params, analytic):
        report.errors[name] = relative_error(a, numeric_grad(f, p, step), floor)
    return report
