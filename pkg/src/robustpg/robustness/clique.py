"""Exact maximum clique by branch and bound with a greedy-coloring bound."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError


def _color_bound(P: int, adj: list[int]) -> int:
    """Number of colors a greedy sequential coloring uses on vertex set ``P``."""
    colors = 0
    uncolored = P
    while uncolored:
        colors += 1
        avail = uncolored
        while avail:
            v = (avail & -avail).bit_length() - 1
            uncolored &= ~(1 << v)
            avail &= ~(1 << v) & ~adj[v]
    return colors


def max_clique(adjacency) -> list[int]:
    """Maximum clique of an undirected graph given as a symmetric boolean matrix.

    Among maximum cliques the lexicographically smallest sorted vertex list is
    returned.  Vertices are branched on in increasing order and a branch is cut
    only when it cannot produce a strictly larger clique, so the first maximum
    clique found is the lexicographically smallest one.
    """
    A = np.asarray(adjacency)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError("adjacency must be a square matrix")
    A = A.astype(bool)
    if not np.array_equal(A, A.T):
        raise InvalidArgumentError("adjacency matrix is not symmetric")
    if np.any(np.diag(A)):
        raise InvalidArgumentError("adjacency matrix must have a zero diagonal")
    n = A.shape[0]
    if n == 0:
        return []
    adj = [sum(1 << int(j) for j in np.nonzero(A[i])[0]) for i in range(n)]
    best: list[int] = []

    def expand(R: list[int], P: int) -> None:
        nonlocal best
        if not P:
            if len(R) > len(best):
                best = list(R)
            return
        if len(R) + _color_bound(P, adj) <= len(best):
            return
        while P:
            if len(R) + bin(P).count("1") <= len(best):
                return
            v = (P & -P).bit_length() - 1
            R.append(v)
            expand(R, P & adj[v])
            R.pop()
            P &= ~(1 << v)

    expand([], (1 << n) - 1)
    return best


def greedy_clique(adjacency) -> list[int]:
    """Simple greedy clique (highest degree first); a lower bound for tests."""
    A = np.asarray(adjacency, dtype=bool)
    order = sorted(range(A.shape[0]), key=lambda v: (-int(A[v].sum()), v))
    clique: list[int] = []
    for v in order:
        if all(A[v, u] for u in clique):
            clique.append(v)
    return sorted(clique)
