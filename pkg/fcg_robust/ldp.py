"""Local degree profile (LDP) structural node features."""

import numpy as np

LDP_WIDTH = 5


def undirected_neighbours(n, edges):
    """Neighbour lists of the deduplicated undirected view of a call graph.

    Caller and callee are neighbours of each other; self-loops are ignored.

    Returns
    -------
    (indptr, indices)
        CSR layout: the neighbours of node ``i`` are
        ``indices[indptr[i]:indptr[i + 1]]``, sorted ascending.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = edges[edges[:, 0] != edges[:, 1]]
    both = np.concatenate([edges, edges[:, ::-1]])
    if len(both):
        both = np.unique(both, axis=0)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(both[:, 0], minlength=n), out=indptr[1:])
    return indptr, both[:, 1].copy()


def ldp_features(n, edges):
    """The (n, 5) local degree profile matrix.

    Row ``i`` is ``[deg(i), min, max, mean, std]`` where the statistics range
    over the degrees of ``i``'s neighbours (population standard deviation).
    Isolated nodes get all zeros.
    """
    indptr, indices = undirected_neighbours(n, edges)
    degree = np.diff(indptr)
    out = np.zeros((n, LDP_WIDTH))
    out[:, 0] = degree
    for node in range(n):
        if degree[node] == 0:
            continue
        neighbour_degrees = degree[indices[indptr[node]:indptr[node + 1]]]
        neighbour_degrees = neighbour_degrees.astype(np.float64)
        out[node, 1] = neighbour_degrees.min()
        out[node, 2] = neighbour_degrees.max()
        out[node, 3] = neighbour_degrees.mean()
        out[node, 4] = neighbour_degrees.std()
    return out
