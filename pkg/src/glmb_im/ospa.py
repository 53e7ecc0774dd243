"""OSPA distance with its localisation/cardinality decomposition."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class OspaParams:
    cutoff_c: float = 20.0
    order_p: float = 1.0

    def __post_init__(self):
        if self.cutoff_c <= 0:
            raise ValueError("cutoff c must be positive")
        if self.order_p < 1:
            raise ValueError("order p must be at least 1")


def ospa(estimated, truth, params=OspaParams()):
    """Return ``(total, localisation, cardinality)`` between two point sets.

    ``total**p == loc**p + card**p``; both sets empty gives zeros.
    """
    X = np.asarray(estimated, dtype=float).reshape(-1, 2)
    Y = np.asarray(truth, dtype=float).reshape(-1, 2)
    c, p = params.cutoff_c, params.order_p
    m, n = sorted((len(X), len(Y)))
    if n == 0:
        return 0.0, 0.0, 0.0
    if m == 0:
        return c, 0.0, c
    d = np.sqrt(((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1))
    cost = np.minimum(d, c) ** p
    rows, cols = linear_sum_assignment(cost)
    loc_p = cost[rows, cols].sum() / n
    card_p = c**p * (n - m) / n
    return float((loc_p + card_p) ** (1 / p)), float(loc_p ** (1 / p)), float(card_p ** (1 / p))
