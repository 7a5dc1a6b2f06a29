"""Central finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_relative_error: float
    n_checked: int
    worst: tuple[str, tuple[int, ...], float, float] | None = None
    per_group: dict[str, float] = field(default_factory=dict)

    def __float__(self) -> float:
        return self.max_relative_error


def relative_error(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / denom


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    eps: float = 1e-5,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    groups: dict[str, str] | None = None,
) -> GradCheckResult:
    """Compare backprop gradients of ``f()`` with central differences.

    ``f`` must be deterministic and rebuild its graph on each call from the
    current values in ``params``. Parameters are perturbed in place and
    restored afterwards. When ``n_samples`` is given, that many scalar entries
    are drawn (at least one from every parameter tensor when possible);
    otherwise every entry is checked. ``groups`` maps parameter names to a
    group label so the worst error per group is reported.
    """
    named = dict(params) if isinstance(params, dict) else {f"p{i}": p for i, p in enumerate(params)}
    for p in named.values():
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in named.items()
    }

    coords: list[tuple[str, tuple[int, ...]]] = []
    if n_samples is None:
        for name, p in named.items():
            coords.extend((name, idx) for idx in np.ndindex(p.shape))
    else:
        rng = rng or np.random.default_rng(0)
        names = list(named)
        for name in names[: min(len(names), n_samples)]:
            coords.append((name, _random_index(named[name].shape, rng)))
        sizes = np.array([named[n].size for n in names], dtype=float)
        while len(coords) < n_samples:
            name = names[rng.choice(len(names), p=sizes / sizes.sum())]
            coords.append((name, _random_index(named[name].shape, rng)))

    worst = 0.0
    worst_rec = None
    per_group: dict[str, float] = {}
    for name, idx in coords:
        p = named[name]
        orig = p.data[idx].copy()
        p.data[idx] = orig + eps
        f_plus = float(f().data)
        p.data[idx] = orig - eps
        f_minus = float(f().data)
        p.data[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[name][idx])
        err = relative_error(a, numeric)
        if groups is not None:
            g = groups.get(name, "other")
            per_group[g] = max(per_group.get(g, 0.0), err)
        if worst_rec is None or err > worst:
            worst, worst_rec = err, (name, idx, a, numeric)
    return GradCheckResult(worst, len(coords), worst_rec, per_group)


def _random_index(shape: tuple[int, ...], rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(int(rng.integers(n)) for n in shape)
