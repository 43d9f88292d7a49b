"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import TrainingBatch, loss_and_grads
from .params import ModelParams

# Absolute floor in the relative-error denominator.  Central differences in
# float64 carry roughly 1e-10 of round-off on losses of order 10, so
# coordinates whose true gradient is below this floor are compared on an
# absolute scale instead.
DENOM_FLOOR = 1e-6


@dataclass
class CoordinateCheck:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        return relative_error(self.analytic, self.numeric)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a) + abs(b), DENOM_FLOOR)


def _loss_at(params: ModelParams, batch: TrainingBatch, encoder) -> float:
    value, _ = loss_and_grads(params, batch, encoder)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite loss during gradient check")
    return value


def check_coordinate(params, batch, name, index, epsilon=1e-6, encoder=None, grads=None) -> CoordinateCheck:
    """Compare one analytic partial derivative against a central difference.

    ``params`` should already be float64; it is restored after probing.
    """
    if grads is None:
        _, grads = loss_and_grads(params, batch, encoder)
    tensor = params.tensors[name]
    original = tensor[index]
    tensor[index] = original + epsilon
    plus = _loss_at(params, batch, encoder)
    tensor[index] = original - epsilon
    minus = _loss_at(params, batch, encoder)
    tensor[index] = original
    return CoordinateCheck(name, tuple(int(i) for i in np.atleast_1d(index)), float(grads[name][index]), (plus - minus) / (2 * epsilon))


def _pick_coordinates(params: ModelParams, batch: TrainingBatch, n_coords: int, rng) -> list[tuple[str, tuple]]:
    pools = {}
    for name in params.names:
        tensor = params.tensors[name]
        if name == "encoder.embed":
            rows = np.unique(params.token_ids(batch.sentence.texts))
            flat = [(int(r), int(c)) for r in rows for c in range(tensor.shape[1])]
        else:
            flat = [tuple(int(i) for i in np.unravel_index(k, tensor.shape)) for k in range(tensor.size)]
        pools[name] = [flat[k] for k in rng.permutation(len(flat))]
    # round-robin so small tensors are exhausted and the rest fill the quota
    picks = []
    depth = 0
    while len(picks) < n_coords and any(depth < len(p) for p in pools.values()):
        for name, pool in pools.items():
            if depth < len(pool):
                picks.append((name, pool[depth]))
        depth += 1
    return picks


def gradient_check(
    params: ModelParams,
    batch: TrainingBatch,
    epsilon: float = 1e-6,
    n_coords: int = 200,
    seed: int = 0,
    encoder=None,
    details: list | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    At least ``n_coords`` coordinates are probed, spread evenly across all
    tensors; embedding rows are drawn from the tokens present in the batch.
    Computation runs on a float64 copy of ``params``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p64 = params.astype(np.float64)
    if encoder is not None and hasattr(encoder, "dtype"):
        encoder.dtype = np.float64
    rng = np.random.default_rng(seed)
    value, grads = loss_and_grads(p64, batch, encoder)
    if not np.isfinite(value):
        raise FloatingPointError("non-finite loss during gradient check")
    worst = 0.0
    for name, index in _pick_coordinates(p64, batch, n_coords, rng):
        check = check_coordinate(p64, batch, name, index, epsilon, encoder, grads)
        if details is not None:
            details.append(check)
        worst = max(worst, check.rel_error)
    return worst
