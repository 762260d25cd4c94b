"""Input checks shared by the estimators, the model and the CLI."""

import numpy as np

__all__ = [
    "CompositionError",
    "check_compositions",
    "replace_zeros",
    "check_design",
    "encode_groups",
]

SUM_TOL = 1e-9


class CompositionError(ValueError):
    """A row is not a point of the open simplex.

    ``row`` and ``column`` locate the first offending entry (0-based) when
    known.
    """

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


def replace_zeros(Y):
    """Shrink compositions toward the barycentre: ``(y (N - 1) + 1/C) / N``.

    ``N`` is the number of rows. Zeros become strictly positive and rows keep
    summing to one.
    """
    Y = np.asarray(Y, dtype=float)
    n, C = Y.shape
    if n < 2:
        raise ValueError("zero replacement needs at least two rows")
    return (Y * (n - 1) + 1.0 / C) / n


def check_compositions(Y, tol=SUM_TOL, zero_adjust=False):
    """Validate and renormalize a sample of compositions.

    Parameters
    ----------
    Y : array_like, shape (n, C) or (C,)
    tol : float
        Largest accepted deviation of a row sum from one. Rows inside the
        tolerance are divided by their sum.
    zero_adjust : bool
        Apply :func:`replace_zeros` before the positivity check.

    Returns
    -------
    ndarray, shape (n, C)
        Always two-dimensional.
    """
    Y = np.array(Y, dtype=float, ndmin=2)
    if Y.ndim != 2:
        raise CompositionError(f"expected a 2-d array of compositions, got shape {Y.shape}")
    if Y.shape[1] < 2:
        raise CompositionError(f"compositions need at least 2 parts, got {Y.shape[1]}")
    if Y.shape[0] == 0:
        raise CompositionError("no compositions given")
    finite = np.isfinite(Y)
    if not finite.all():
        r, c = np.argwhere(~finite)[0]
        raise CompositionError(f"non-finite value at row {r}, column {c}", r, c)
    sums = Y.sum(axis=1)
    off = np.abs(sums - 1.0) > tol
    if off.any():
        r = int(np.argmax(off))
        raise CompositionError(f"row {r} sums to {sums[r]!r}, not 1 (tolerance {tol:g})", r)
    Y = Y / sums[:, None]
    if zero_adjust:
        Y = replace_zeros(Y)
    bad = Y <= 0
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise CompositionError(
            f"row {r}, column {c} is {Y[r, c]!r}; parts must be strictly positive "
            "(enable zero adjustment to shrink zeros away)",
            r,
            c,
        )
    return Y


def check_design(M, n_rows, name="X"):
    """Return ``M`` as a finite float matrix with ``n_rows`` rows.

    ``None`` means intercept only.
    """
    if M is None:
        return np.ones((n_rows, 1))
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2 or M.shape[0] != n_rows:
        raise ValueError(f"{name} must have {n_rows} rows, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite values")
    return M


def encode_groups(groups, n_rows, levels=None):
    """Map arbitrary group labels to codes ``0..L-1``.

    Parameters
    ----------
    groups : array_like or None
        Labels per row; ``None`` puts every row in one group.
    levels : sequence, optional
        Known labels in code order. Labels outside it raise ``ValueError``.
        When omitted, levels are the sorted unique labels.

    Returns
    -------
    codes : ndarray of int, shape (n_rows,)
    levels : list
    """
    if groups is None:
        if levels is not None and len(levels) != 1:
            raise ValueError("group labels required: the model was fitted with several groups")
        return np.zeros(n_rows, dtype=int), list(levels) if levels is not None else [0]
    groups = np.asarray(groups)
    if groups.shape != (n_rows,):
        raise ValueError(f"groups must have shape ({n_rows},), got {groups.shape}")
    if levels is None:
        levels = sorted(np.unique(groups).tolist())
    lookup = {lev: i for i, lev in enumerate(levels)}
    codes = np.empty(n_rows, dtype=int)
    for i, g in enumerate(groups.tolist()):
        try:
            codes[i] = lookup[g]
        except KeyError:
            raise ValueError(f"unknown group label {g!r} at row {i}") from None
    return codes, list(levels)
