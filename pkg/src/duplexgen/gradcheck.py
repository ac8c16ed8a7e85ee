"""Central-difference verification of analytic gradients.

The objective is re-evaluated with parameters lifted to float64 so the
differences are conditioned well enough to resolve the tolerances the
rest of the suite asserts (a float32 forward pass quantises the loss to
~1e-7, which already swamps a 1e-6 relative check on f'(3)=6 for p^2).
The ops are dtype-preserving, so the float64 pass exercises the exact
same code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic_at_worst: float
    central_at_worst: float
    entries_checked: int

    def __str__(self):
        return (f"max_rel_err={self.max_rel_err:.3e} at {self.worst_param}{self.worst_index} "
                f"(analytic={self.analytic_at_worst:.6e}, central={self.central_at_worst:.6e}, "
                f"checked={self.entries_checked})")


class NonDeterministicError(RuntimeError):
    pass


def finite_diff_grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore,
                           eps: float = 1e-3, limit_per_param: int | None = None) -> GradCheckReport:
    """Compare f's analytic parameter gradients against central differences.

    Relative error per entry is |analytic - central| / (|analytic| + |central| + 1e-8);
    the report carries the max over all checked entries. `f` must be
    deterministic: two evaluations at the same point are compared bitwise.
    """
    if not (1e-4 <= eps <= 1e-2):
        raise ValueError(f"eps must lie in [1e-4, 1e-2], got {eps}")

    store = params.astype(np.float64)

    with no_grad():
        v1 = float(f(store).data)
        v2 = float(f(store).data)
    if v1 != v2:
        raise NonDeterministicError(f"objective is not deterministic: {v1!r} != {v2!r}")

    store.zero_grad()
    loss = f(store)
    loss.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.items()}

    worst = (0.0, "", (), 0.0, 0.0)
    checked = 0
    for name, t in store.items():
        flat = t.data.reshape(-1)
        n = flat.size if limit_per_param is None else min(flat.size, limit_per_param)
        a_flat = analytic[name].reshape(-1)
        for i in range(n):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = float(f(store).data)
            flat[i] = orig - eps
            with no_grad():
                f_minus = float(f(store).data)
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * eps)
            a = float(a_flat[i])
            rel = abs(a - central) / (abs(a) + abs(central) + 1e-8)
            checked += 1
            if rel > worst[0]:
                idx = np.unravel_index(i, t.data.shape)
                worst = (rel, name, tuple(int(j) for j in idx), a, central)

    return GradCheckReport(max_rel_err=worst[0], worst_param=worst[1], worst_index=worst[2],
                           analytic_at_worst=worst[3], central_at_worst=worst[4],
                           entries_checked=checked)
