"""Cross-validation folds and grid selection shared by the predictive models."""

from __future__ import annotations

import logging

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)


def make_folds(n: int, folds: int, seed_seq) -> list[np.ndarray]:
    """Seeded shuffle of row indices split into `folds` contiguous blocks."""
    if folds < 2:
        raise ConfigError("cross-validation needs at least 2 folds")
    if n < 2 * folds:
        raise ConfigError(f"{n} rows cannot support {folds}-fold cross-validation")
    rng = np.random.default_rng(seed_seq)
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cv_select(grid: list, fold_mse, tie_key) -> tuple[int, list[dict]]:
    """Mean CV error per grid point; ties resolved by tie_key(grid_point).

    fold_mse(i) returns the list of per-fold MSEs for grid point i
    (degenerate folds already skipped). Returns (best index, cv table).
    """
    if not grid:
        raise ConfigError("empty hyperparameter grid")
    table = []
    for i, point in enumerate(grid):
        errs = fold_mse(i)
        if not errs:
            raise ConfigError("every cross-validation fold was degenerate")
        table.append({"params": point, "cv_mse": float(np.mean(errs)),
                      "folds_used": len(errs)})
    best = min(range(len(grid)), key=lambda i: (table[i]["cv_mse"],) + tuple(tie_key(grid[i])))
    return best, table
