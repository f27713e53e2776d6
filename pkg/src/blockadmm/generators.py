"""Seeded instance generators for the four benchmark families.

Every generator draws from ``numpy.random.default_rng(seed)`` only, so a
given (family, parameters, seed) pair always produces the same problem,
bit for bit, including its JSON serialization.
"""

from __future__ import annotations

import numpy as np

from .problem import Block, SmoothTerm, build_problem
from .prox import L1, GroupL2

__all__ = [
    "gen_l1_kblock",
    "gen_group_l2",
    "gen_lasso",
    "gen_consensus",
    "FAMILIES",
]


def gen_l1_kblock(m=20, K=30, a=-1.0, b=1.0, seed=0):
    """K scalar blocks with l1 penalties and a shared box.

        min  sum_k |x_k|   s.t.  E x = q,  a <= x_k <= b,

    with the columns of E standard normal and q = E x0 for a uniformly
    drawn x0 inside the box, so the instance is feasible with margin.
    """
    if not (a < b):
        raise ValueError("need a < b for the box, got a=%g b=%g" % (a, b))
    if m < 1 or K < 1:
        raise ValueError("m and K must be positive")
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((m, K))
    x0 = rng.uniform(a, b, size=K)
    q = E @ x0
    blocks = [
        Block(E=E[:, [k]], nonsmooth=L1(1.0), box=(a, b))
        for k in range(K)
    ]
    return build_problem(blocks, q)


def gen_group_l2(m=15, K=5, n_k=3, a=-1.0, b=1.0, seed=0):
    """K boxed blocks of dimension n_k with one l2 group each.

        min  sum_k ||x_k||_2   s.t.  sum_k E_k x_k = q,  a <= x_k <= b,

    with each E_k an m-by-n_k standard normal matrix, re-drawn up to 3
    times if it fails the full-column-rank test (m >= n_k keeps that
    rare).
    """
    if m < n_k:
        raise ValueError(
            "m=%d must be at least the block dimension n_k=%d" % (m, n_k)
        )
    if not (a < b):
        raise ValueError("need a < b for the box, got a=%g b=%g" % (a, b))
    rng = np.random.default_rng(seed)
    mats = []
    for k in range(K):
        for attempt in range(4):
            Ek = rng.standard_normal((m, n_k))
            evals = np.linalg.eigvalsh(Ek.T @ Ek)
            if evals[0] > 1e-10 * max(evals[-1], 1e-300):
                mats.append(Ek)
                break
        else:
            raise ValueError(
                "block %d: could not draw a full-column-rank E_k in 4 "
                "attempts" % k
            )
    x0 = rng.uniform(a, b, size=K * n_k)
    q = sum(Ek @ x0[k * n_k:(k + 1) * n_k] for k, Ek in enumerate(mats))
    blocks = [
        Block(E=Ek, nonsmooth=GroupL2([list(range(n_k))], [1.0]),
              box=(a, b))
        for Ek in mats
    ]
    return build_problem(blocks, q)


def gen_lasso(n_obs=40, n_feat=60, K=2, lam=0.5, noise=0.1, seed=0):
    """Lasso split into a coefficient block and a residual block:

        min  lam * ||x||_1 + (1/2) * ||r||^2   s.t.  A x + r = b,

    with b = A x_sparse + noise, x_sparse having ~n_feat/10 entries of
    +-1. Eliminating r recovers the usual
    (1/2)||A x - b||^2 + lam ||x||_1. The coefficient block's coupling
    matrix A is n_obs-by-n_feat, so it lacks full column rank whenever
    n_feat > n_obs; this family is two blocks by construction (K is
    validated, not varied).
    """
    if K != 2:
        raise ValueError(
            "this family has exactly two blocks (coefficients and "
            "residual); got K=%d" % K
        )
    if lam < 0 or noise < 0:
        raise ValueError("lam and noise must be nonnegative")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_obs, n_feat))
    support = rng.choice(n_feat, size=max(1, n_feat // 10), replace=False)
    x_sparse = np.zeros(n_feat)
    x_sparse[support] = rng.choice([-1.0, 1.0], size=support.size)
    b_vec = A @ x_sparse + noise * rng.standard_normal(n_obs)
    blocks = [
        Block(E=A, nonsmooth=L1(lam)),
        Block(E=np.eye(n_obs),
              smooth=SmoothTerm(kind="quadratic", b=np.zeros(n_obs))),
    ]
    return build_problem(blocks, b_vec)


def gen_consensus(K=3, rows=10, cols=6, w=0.5, noise=0.1, seed=0):
    """Consensus form of a shared l1-regularized least-squares fit:

        min  sum_k ( ||A x_k - b||^2 + w * ||x_k||_1 )
        s.t. x_k - z = 0  for every k,

    with one design matrix A (rows-by-cols) and target b shared by all K
    data blocks. The constraint stacks K copies of x_k - z = 0, so the
    consensus block's coupling matrix is K stacked negated identities
    (its Gram matrix is K * I). The unsquared-coefficient objective
    ||A x_k - b||^2 is encoded as (1/2)||sqrt(2) A x_k - sqrt(2) b||^2.
    """
    if K < 2:
        raise ValueError("consensus needs at least two local blocks, "
                         "got K=%d" % K)
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    if w < 0 or noise < 0:
        raise ValueError("w and noise must be nonnegative")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((rows, cols))
    support = rng.choice(cols, size=max(1, cols // 10), replace=False)
    x_sparse = np.zeros(cols)
    x_sparse[support] = rng.choice([-1.0, 1.0], size=support.size)
    b_vec = A @ x_sparse + noise * rng.standard_normal(rows)
    m = K * cols
    sqrt2 = float(np.sqrt(2.0))
    blocks = []
    for k in range(K):
        Ek = np.zeros((m, cols))
        Ek[k * cols:(k + 1) * cols, :] = np.eye(cols)
        blocks.append(Block(
            E=Ek,
            A=sqrt2 * A,
            smooth=SmoothTerm(kind="quadratic", b=sqrt2 * b_vec),
            nonsmooth=L1(w),
        ))
    Ez = np.zeros((m, cols))
    for k in range(K):
        Ez[k * cols:(k + 1) * cols, :] = -np.eye(cols)
    blocks.append(Block(E=Ez))
    return build_problem(blocks, np.zeros(m))


FAMILIES = {
    "l1_kblock": gen_l1_kblock,
    "group_l2": gen_group_l2,
    "lasso": gen_lasso,
    "consensus": gen_consensus,
}
