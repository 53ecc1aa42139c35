"""Exact minimum-cost assignment (Hungarian method with row/column potentials)."""

import numpy as np


class AssignmentError(ValueError):
    """The cost matrix cannot be assigned as requested."""


def hungarian(cost):
    """Assign every row of an R x C cost matrix (R <= C) to a distinct column at minimum total.

    Returns the (row, column) pairs sorted by row. Rows are inserted one at a time in index
    order and, among equally cheap augmenting columns, the lowest column index wins, so equal
    inputs always give equal outputs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise AssignmentError("Cost must be a matrix, got shape {}".format(cost.shape))
    n_rows, n_cols = cost.shape
    if n_rows > n_cols:
        raise AssignmentError(
            "More rows than columns ({} > {}); pad or transpose first".format(n_rows, n_cols))
    if not np.isfinite(cost).all():
        raise AssignmentError("Cost matrix has non-finite entries")
    if n_rows == 0:
        return []

    # 1-indexed potentials; column 0 is the virtual start of each augmenting path
    row_pot = np.zeros(n_rows + 1)
    col_pot = np.zeros(n_cols + 1)
    row_of_col = np.zeros(n_cols + 1, dtype=int)
    way = np.zeros(n_cols + 1, dtype=int)

    for row in range(1, n_rows + 1):
        row_of_col[0] = row
        col = 0
        min_slack = np.full(n_cols + 1, np.inf)
        used = np.zeros(n_cols + 1, dtype=bool)
        while True:
            used[col] = True
            current_row = row_of_col[col]
            free = ~used[1:]
            slack = cost[current_row - 1] - row_pot[current_row] - col_pot[1:]
            improve = free & (slack < min_slack[1:])
            min_slack[1:][improve] = slack[improve]
            way[1:][improve] = col

            candidates = np.where(free, min_slack[1:], np.inf)
            next_col = int(np.argmin(candidates)) + 1
            delta = candidates[next_col - 1]

            row_pot[row_of_col[used]] += delta
            col_pot[used] -= delta
            min_slack[~used] -= delta

            col = next_col
            if row_of_col[col] == 0:
                break

        # flip the augmenting path
        while col:
            previous = way[col]
            row_of_col[col] = row_of_col[previous]
            col = previous

    return sorted(
        (int(row_of_col[c]) - 1, c - 1) for c in range(1, n_cols + 1) if row_of_col[c])


def linear_assignment(cost):
    """Like `hungarian` but also accepts more rows than columns (some rows stay unassigned)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim == 2 and cost.shape[0] > cost.shape[1]:
        return sorted((row, col) for col, row in hungarian(cost.T))
    return hungarian(cost)


def assignment_cost(cost, pairs):
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[row, col] for row, col in pairs))
