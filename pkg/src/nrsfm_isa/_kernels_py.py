"""Pure-NumPy versions of the inner kernels (fallback for the compiled module)."""

import numpy as np


def isa_sweep(W, Z, K, eps):
    """One FastISA fixed-point update before orthogonalisation.

    Parameters
    ----------
    W : ndarray, shape (n, n)
        Current orthogonal unmixing, ``n = 3K``; rows ``3k..3k+2`` span
        subspace ``k``.
    Z : ndarray, shape (n, J)
        Whitened data, one sample per column.
    K : int
    eps : float
        Smoothing inside the square root of the subspace energy.

    Returns
    -------
    W_new : ndarray, shape (n, n)
        ``E[z y_i g(u_k)] - E[g(u_k) + 2 y_i^2 g'(u_k)] w_i`` for every row.
    loglik : float
        ``sum_j sum_k -sqrt(u_k(j) + eps)``.
    """
    n, J = Z.shape
    Y = W @ Z
    Y2 = Y * Y
    U = Y2.reshape(K, 3, J).sum(axis=1) + eps
    root = np.sqrt(U)
    g = -0.5 / root
    gp = 0.25 / (U * root)
    g_rows = np.repeat(g, 3, axis=0)
    gp_rows = np.repeat(gp, 3, axis=0)
    first = (Y * g_rows) @ Z.T / J
    second = (g_rows + 2.0 * Y2 * gp_rows).mean(axis=1)
    return first - second[:, None] * W, float(-root.sum())


def block_energy_table(C2, K):
    """``S[x, b] = sum of C2[x, c]`` over the indices ``c`` of block ``b``."""
    n = C2.shape[0]
    return C2.reshape(n, K, 3).sum(axis=2)


def best_swap(C2, K):
    """Best single transposition for the in-block energy of ``C2``.

    ``C2`` holds the squared entries of the current (permuted) covariance.
    Returns ``(gain, a, b)`` with ``a < b``: the swap of positions ``a`` and
    ``b`` that most increases the in-block energy (equivalently, decreases
    the off-block energy). Ties go to the lexicographically smallest pair.
    """
    n = C2.shape[0]
    S = block_energy_table(C2, K)
    blk = np.arange(n) // 3
    d = np.diag(C2)
    # own[a] = energy of a with the rest of its block
    own = S[np.arange(n), blk] - d
    # cross[a, b] = energy of a with b's block, excluding the (a, b) entry
    cross = S[:, blk] - C2
    gain = 2.0 * (cross + cross.T - own[:, None] - own[None, :])
    mask = np.triu(blk[:, None] != blk[None, :], k=1)
    gain = np.where(mask, gain, -np.inf)
    flat = int(np.argmax(gain))
    a, b = divmod(flat, n)
    return float(gain[a, b]), a, b
