"""
Finite-difference gradient checking

Compares tape gradients against central differences
    (f(θ + h·e_i) − f(θ − h·e_i)) / 2h
for a scalar closure `f`. Parameters with more entries than
`samples_per_param` are checked on a seeded random subset of entries.

An entry whose perturbation flips the branch of a piecewise op (a relu
crossing zero, a max changing its winner) is skipped: the central
difference straddles a kink there and does not estimate the derivative.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from grm.autograd.tensor import Tape, Tensor, no_grad, tracing_branches, using_tape
from grm.core.errors import AutogradError, GradCheckFailure, NonDeterministicError, UsageError

logger = logging.getLogger(__name__)

MIN_STEP = 1e-7
MAX_STEP = 1e-3
DEFAULT_ABS_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    """Worst relative error per parameter"""
    errors: Dict[str, float] = field(default_factory=dict)
    checked_entries: Dict[str, int] = field(default_factory=dict)
    skipped_entries: Dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst_parameter(self) -> Optional[str]:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)

    def raise_if_above(self, tolerance: float) -> None:
        worst = self.worst_parameter
        if worst is not None and self.errors[worst] >= tolerance:
            raise GradCheckFailure(worst, self.errors[worst], tolerance)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    samples_per_param: Optional[int] = None,
    seed: int = 0,
    abs_floor: float = DEFAULT_ABS_FLOOR,
) -> GradCheckReport:
    """
    Compare tape gradients of `f` with central finite differences

    Args:
        f: Closure rebuilding the scalar loss from the current parameter values;
            must be deterministic (freeze any random noise inside it)
        params: Named leaf tensors to check (perturbed in place, then restored)
        h: Finite-difference step, within [1e-7, 1e-3]
        samples_per_param: Entries checked per parameter (None = all)
        seed: Seed for choosing the checked entries
        abs_floor: Lower bound of each entry's relative-error denominator;
            entries whose gradients both fall below it are compared absolutely

    Returns:
        GradCheckReport holding, per parameter, the worst entry of
        |analytic − numeric| / max(|analytic|, |numeric|, abs_floor)

    Raises:
        UsageError: h outside [1e-7, 1e-3]
        NonDeterministicError: two evaluations of f at the same point differ
    """
    if not MIN_STEP <= h <= MAX_STEP:
        raise UsageError(f"finite-difference step {h} outside [{MIN_STEP}, {MAX_STEP}]")

    for tensor in params.values():
        tensor.zero_grad()
    with using_tape(Tape()):
        loss = f()
        if loss.size != 1:
            raise AutogradError(f"gradient check needs a scalar closure, got shape {loss.shape}")
        reference = loss.item()
        loss.backward()

    with no_grad(), tracing_branches() as branches:
        first = f().item()
    with no_grad():
        second = f().item()
    if not (first == second == reference):
        raise NonDeterministicError(
            f"closure is not deterministic: {reference!r}, {first!r}, {second!r}"
        )

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, tensor in params.items():
        analytic = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
        flat = tensor.data.reshape(-1)
        if samples_per_param is None or flat.size <= samples_per_param:
            indices = np.arange(flat.size)
        else:
            indices = np.sort(rng.choice(flat.size, size=samples_per_param, replace=False))

        kept, numeric = [], []
        with no_grad():
            for i in indices:
                original = flat[i]
                flat[i] = original + h
                with tracing_branches() as plus_branches:
                    plus = f().item()
                flat[i] = original - h
                with tracing_branches() as minus_branches:
                    minus = f().item()
                flat[i] = original
                if plus_branches != branches or minus_branches != branches:
                    continue
                kept.append(i)
                numeric.append((plus - minus) / (2.0 * h))

        report.checked_entries[name] = len(kept)
        report.skipped_entries[name] = len(indices) - len(kept)
        if not kept:
            report.errors[name] = 0.0
            logger.warning(f"gradcheck {name}: every sampled entry sits next to a kink")
            continue
        picked = analytic.reshape(-1)[kept]
        numeric_arr = np.array(numeric)
        scale = np.maximum(np.maximum(np.abs(picked), np.abs(numeric_arr)), abs_floor)
        report.errors[name] = float(np.max(np.abs(picked - numeric_arr) / scale))
        logger.debug(f"gradcheck {name}: {len(kept)} entries, rel. err {report.errors[name]:.2e}")

    return report
