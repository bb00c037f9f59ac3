"""Dense table helpers shared by the ground and lifted engines.

Tables are numpy arrays whose axes are identified by hashable keys
(ground variables, or lifted occurrence handles).  Products align shared
keys by broadcasting; axis order of the result is first-operand keys
followed by the second operand's new keys.
"""

from __future__ import annotations

from typing import Hashable, Sequence

import numpy as np

Key = Hashable


def aligned(
    table: np.ndarray, keys: Sequence[Key], order: Sequence[Key]
) -> np.ndarray:
    """Broadcastable view of ``table`` with axes arranged per ``order``."""
    idx = {k: i for i, k in enumerate(order)}
    perm = sorted(range(len(keys)), key=lambda i: idx[keys[i]])
    moved = np.transpose(table, perm)
    shape = [1] * len(order)
    for axis, i in enumerate(perm):
        shape[idx[keys[i]]] = moved.shape[axis]
    return moved.reshape(shape)


def keyed_product(
    keys1: Sequence[Key],
    t1: np.ndarray,
    keys2: Sequence[Key],
    t2: np.ndarray,
) -> tuple[list[Key], np.ndarray]:
    """Pointwise product of two tables joined on shared axis keys."""
    order = list(keys1) + [k for k in keys2 if k not in set(keys1)]
    return order, aligned(t1, keys1, order) * aligned(t2, keys2, order)


def sum_out(
    keys: Sequence[Key], table: np.ndarray, remove: Key
) -> tuple[list[Key], np.ndarray]:
    """Sum a single keyed axis out of a table."""
    axis = list(keys).index(remove)
    kept = [k for i, k in enumerate(keys) if i != axis]
    return kept, table.sum(axis=axis)
