"""Random small problems and variational states for the oracle tests."""

import numpy as np

from poseidon.cavi import VariationalState
from poseidon.model import (
    AbundanceMatrix,
    DatasetCollection,
    FixedBeta,
    GridBeta,
    Hyperparameters,
    NIGPrior,
    build_grid,
)


def random_problem(seed, max_J=6, max_N=8, max_K=4, max_L=3, max_T=2, grid_beta=False):
    rng = np.random.default_rng(seed)
    J = int(rng.integers(1, max_J + 1))
    T = int(rng.integers(1, max_T + 1))
    K = int(rng.integers(1, max_K + 1))
    L = int(rng.integers(1, max_L + 1))
    # random distinct pixels in a small box, so some pixels may be isolated
    cells = rng.choice(16, size=J, replace=False)
    grid = build_grid(np.column_stack([cells % 4, cells // 4]))
    datasets = [
        AbundanceMatrix(rng.normal(rng.normal(0, 2), rng.uniform(0.5, 2), (int(rng.integers(1, max_N + 1)), J)),
                        name=f"D{t}")
        for t in range(T)
    ]
    nig = tuple(NIGPrior(rng.normal(), rng.uniform(0.05, 2), rng.uniform(1, 4), rng.uniform(0.5, 3))
                for _ in range(T))
    beta = GridBeta(float(rng.uniform(0.5, 3)), int(rng.integers(2, 8))) if grid_beta \
        else FixedBeta(float(rng.uniform(0, 2)))
    h = Hyperparameters(K=K, L=L, nig=nig, b0=float(rng.uniform(1e-3, 2)), a_alpha=float(rng.uniform(0.5, 3)),
                        b_alpha=float(rng.uniform(0.5, 3)), beta=beta)
    return DatasetCollection(datasets, grid), h


def random_state(c, h, seed):
    """A valid state with every parameter drawn at random (not from init_state)."""
    rng = np.random.default_rng(seed + 10_000)
    J, K, L, T = c.n_cols, h.K, h.L, c.T
    sizes = [d.n_rows for d in c.datasets]

    def simplex(shape):
        w = rng.gamma(0.7, size=shape)
        return w / w.sum(axis=-1, keepdims=True)

    return VariationalState(
        rho=simplex((J, K)),
        xi_all=simplex((sum(sizes), K, L)),
        row_offsets=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
        dir_p=rng.uniform(0.05, 5, (T, K, L)),
        stick_a=rng.uniform(0.5, 6, K - 1),
        stick_b=rng.uniform(0.5, 6, K - 1),
        nig_m=rng.normal(0, 2, (T, L)),
        nig_k=rng.uniform(0.1, 20, (T, L)),
        nig_c=rng.uniform(1, 20, (T, L)),
        nig_d=rng.uniform(0.5, 20, (T, L)),
        s1=float(rng.uniform(1, 6)),
        s2=float(rng.uniform(0.5, 6)),
        beta_bar=h.beta.value if isinstance(h.beta, FixedBeta) else float(rng.uniform(0, 2)),
    )


def naive_args(c, h, s):
    """The state and data in the list layout used by ``naive``."""
    Ys = [d.values for d in c.datasets]
    xi = [x.copy() for x in s.xi]
    p = [s.dir_p[t] for t in range(c.T)]
    atoms = [(list(s.nig_m[t]), list(s.nig_k[t]), list(s.nig_c[t]), list(s.nig_d[t])) for t in range(c.T)]
    priors = [(h.nig_for(t).m0, h.nig_for(t).k0, h.nig_for(t).c0, h.nig_for(t).d0) for t in range(c.T)]
    return Ys, [list(nb) for nb in c.grid.neighbors], xi, p, atoms, priors
