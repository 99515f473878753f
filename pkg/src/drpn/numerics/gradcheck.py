"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tape, Tensor


def rel_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise.

    The floor keeps coordinates whose true gradient is ~0 from dividing
    rounding noise by rounding noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if not v < self.tol}

    def summary(self) -> str:
        lines = [f"{'slot':<40} {'coords':>6} {'max_rel_err':>12}"]
        for name, err in self.errors.items():
            flag = "" if err < self.tol else "  FAIL"
            lines.append(f"{name:<40} {self.checked[name]:>6} {err:12.3e}{flag}")
        lines.append(f"max relative error {self.max_error:.3e} (tol {self.tol:g}): "
                     + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5, tol: float = 1e-4,
               analytic: np.ndarray | None = None) -> GradReport:
    """Compare the tape gradient of scalar ``f`` at ``point`` with central differences.

    ``analytic`` overrides the tape gradient, which is how the checker is
    mutation-tested.
    """
    x0 = np.array(point, dtype=np.float64)
    if analytic is None:
        x = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            y = f(x)
            tape.backward(y)
        analytic = x.grad if x.grad is not None else np.zeros_like(x0)
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    xf = x0.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        fp = f(Tensor(x0)).item()
        xf[i] = orig - step
        fm = f(Tensor(x0)).item()
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * step)
    report = GradReport(tol)
    report.errors["x"] = float(rel_error(analytic, numeric).max(initial=0.0))
    report.checked["x"] = int(x0.size)
    return report


def grad_check_store(loss_fn: Callable[[], Tensor], store: ParamStore, step: float = 1e-5,
                     tol: float = 1e-4, max_coords: int | None = None, seed: int = 0,
                     names: list[str] | None = None) -> GradReport:
    """Check every trainable slot of ``store`` against central differences.

    ``loss_fn`` must rebuild the loss from the current store values. With
    ``max_coords`` set, each slot is probed at that many random coordinates
    (all of them when the slot is smaller).
    """
    store.zero_grads()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    rng = np.random.default_rng(seed)
    report = GradReport(tol)
    for name in names if names is not None else list(store):
        slot = store.slot(name)
        if not slot.trainable:
            continue
        analytic = store.grad(name).reshape(-1).copy()
        data = slot.value.data.reshape(-1)
        coords = np.arange(data.size)
        if max_coords is not None and data.size > max_coords:
            coords = np.sort(rng.choice(data.size, size=max_coords, replace=False))
        errs = []
        for i in coords:
            orig = data[i]
            data[i] = orig + step
            fp = loss_fn().item()
            data[i] = orig - step
            fm = loss_fn().item()
            data[i] = orig
            errs.append(rel_error(analytic[i], (fp - fm) / (2.0 * step)))
        report.errors[name] = float(np.max(errs)) if errs else 0.0
        report.checked[name] = len(coords)
    store.zero_grads()
    return report
