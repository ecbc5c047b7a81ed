"""Mean-field coordinate-ascent variational inference for the nested
biclustering model with a Potts (BNP-MRF) prior on the column clusters.

Indices used below: j pixels (J), i rows of dataset t (N_t), k column
clusters (K), l row clusters / atoms (L). All labels are 0-based.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import kmeans
from .model import (
    DatasetCollection,
    FixedBeta,
    Hyperparameters,
    PartitionEstimate,
    validate_collection,
)
from . import _kernels as _k
from .numerics import digamma, softmax_log

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_EMPTY = 1e-12
_SEED_FLOOR = 0.02


class InvariantError(RuntimeError):
    """Variational parameters left their admissible region."""


@dataclass
class VariationalState:
    rho: np.ndarray                 # (J, K)  q(C_j = k)
    xi_all: np.ndarray              # (sum_t N_t, K, L) q(R_ik = l), datasets stacked by row
    row_offsets: np.ndarray         # (T + 1,) dataset t owns rows row_offsets[t]:row_offsets[t+1]
    dir_p: np.ndarray               # (T, K, L) Dirichlet parameters of omega_k
    stick_a: np.ndarray             # (K-1,) Beta parameters of v_k
    stick_b: np.ndarray             # (K-1,)
    nig_m: np.ndarray               # (T, L)
    nig_k: np.ndarray
    nig_c: np.ndarray
    nig_d: np.ndarray
    s1: float                       # Gamma(s1, s2) for alpha
    s2: float
    beta_bar: float

    @property
    def K(self) -> int:
        return self.rho.shape[1]

    @property
    def L(self) -> int:
        return self.nig_m.shape[1]

    @property
    def xi(self) -> list[np.ndarray]:
        """Per-dataset (N_t, K, L) views of ``xi_all``."""
        o = self.row_offsets
        return [self.xi_all[o[t]:o[t + 1]] for t in range(len(o) - 1)]

    def copy(self) -> "VariationalState":
        return VariationalState(
            self.rho.copy(), self.xi_all.copy(), self.row_offsets.copy(), self.dir_p.copy(),
            self.stick_a.copy(), self.stick_b.copy(), self.nig_m.copy(), self.nig_k.copy(),
            self.nig_c.copy(), self.nig_d.copy(), self.s1, self.s2, self.beta_bar,
        )

    def check(self, atol: float = 1e-9) -> None:
        if not np.allclose(self.rho.sum(axis=1), 1.0, atol=atol, rtol=0):
            raise InvariantError("rho rows do not sum to one")
        if not np.allclose(self.xi_all.sum(axis=2), 1.0, atol=atol, rtol=0):
            raise InvariantError("xi slices do not sum to one")
        positive = [self.dir_p, self.stick_a, self.stick_b, self.nig_k, self.nig_c, self.nig_d,
                    np.array([self.s1, self.s2])]
        if any(np.any(~(a > 0)) for a in positive):
            raise InvariantError("positivity constraint violated")
        if not self.beta_bar >= 0:
            raise InvariantError("beta_bar must be non-negative")


# ------------------------------------------------------------------ packing


@dataclass(frozen=True)
class _Data:
    Y: np.ndarray      # stacked rows of every dataset
    Y2: np.ndarray
    YT: np.ndarray
    Y2T: np.ndarray
    ds: np.ndarray     # dataset index of each stacked row
    offsets: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    T: int


def _pack(c: DatasetCollection) -> _Data:
    cached = c.__dict__.get("_packed")
    if cached is not None:
        return cached
    Y = np.ascontiguousarray(np.vstack([d.values for d in c.datasets]), dtype=float)
    Y2 = Y * Y
    sizes = [d.n_rows for d in c.datasets]
    adj = c.grid.adjacency()
    data = _Data(
        Y, Y2, np.ascontiguousarray(Y.T), np.ascontiguousarray(Y2.T),
        np.repeat(np.arange(len(sizes)), sizes).astype(np.int64),
        np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
        adj.indptr.astype(np.int64), adj.indices.astype(np.int64), len(sizes),
    )
    object.__setattr__(c, "_packed", data)
    return data


def _priors(h: Hyperparameters, T: int):
    pr = [h.nig_for(t) for t in range(T)]
    return tuple(np.array([getattr(p, f) for p in pr], dtype=float) for f in ("m0", "k0", "c0", "d0"))


# ------------------------------------------------------------------ helpers


def _g(x, y):
    """E[log v] for v ~ Beta(x, y)."""
    return digamma(x) - digamma(np.asarray(x) + y)


def expected_log_pi(stick_a, stick_b) -> np.ndarray:
    """E[log pi_k] under truncated stick-breaking with v_K = 1."""
    return _k.expected_log_pi(np.asarray(stick_a, dtype=float), np.asarray(stick_b, dtype=float))


def dirichlet_log_weights(p: np.ndarray) -> np.ndarray:
    """h_l(p_k) = E[log omega_lk] for rows of Dirichlet parameters p (..., L)."""
    return digamma(p) - digamma(p.sum(axis=-1, keepdims=True))


def loglik_coefficients(state: VariationalState):
    """(T, L) arrays a, b, e with E[log N(y | atom l of dataset t)] = a + b*y + e*y**2.

    The -log(2 pi)/2 constant is left out, as in the update formulas.
    """
    if np.any(state.nig_d <= 0) or np.any(state.nig_c <= 0) or np.any(state.nig_k <= 0):
        raise InvariantError("degenerate NIG parameters")
    return _k.loglik_coefficients(state.nig_m, state.nig_k, state.nig_c, state.nig_d)


def data_term(state: VariationalState, c: DatasetCollection) -> np.ndarray:
    """(J, K) matrix sum_t sum_i sum_l xi_ikl * ell_ijl."""
    P = _pack(c)
    return _k.data_term(P.YT, P.Y2T, P.ds, state.xi_all, *loglik_coefficients(state))


# ------------------------------------------------------------ initialization


INIT_SCHEMES = ("softmax", "kmeans")


def _floored(onehot: np.ndarray) -> np.ndarray:
    return (1.0 - _SEED_FLOOR) * onehot + _SEED_FLOOR / onehot.shape[-1]


def _kmeans_start(c: DatasetCollection, K: int, L: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Starting rho and stacked xi from randomly seeded k-means runs.

    Pixels are split by one k-means run on their full profile across all
    datasets, into a random number of clusters between 2 and K. Within
    each dataset, the mean of every row over every starting
    column cluster is pooled, and one 1-d k-means run groups these means
    into a random number of atoms between 2 and L. Rows of clusters that
    start empty pick one of those atoms at random.

    Clusters and atoms that start empty are in practice never filled later
    (an empty atom's expected log weight is about digamma(b0)), so the
    counts in use at the start bound the fitted counts; drawing them at
    random lets the multi-start selection compare different counts.
    """
    P = _pack(c)
    X = P.YT
    J = X.shape[0]
    n_cols = min(int(rng.integers(min(2, K), K + 1)), J)
    cols = kmeans(X, n_cols, seed=int(rng.integers(2**32)), n_init=1).labels
    rho = np.zeros((J, K))
    rho[np.arange(J), cols] = 1.0
    occupied = np.unique(cols)
    xi = []
    for t in range(P.T):
        Y = P.Y[P.offsets[t]:P.offsets[t + 1]]
        means = np.column_stack([Y[:, cols == k].mean(axis=1) for k in occupied])
        n_atoms = min(int(rng.integers(min(2, L), L + 1)), means.size)
        atoms = kmeans(means.reshape(-1, 1), n_atoms, seed=int(rng.integers(2**32)), n_init=1).labels
        labels = rng.integers(n_atoms, size=(Y.shape[0], K))
        labels[:, occupied] = atoms.reshape(means.shape)
        xi.append(np.eye(L)[labels])
    return _floored(rho), _floored(np.concatenate(xi))


def init_state(c: DatasetCollection, h: Hyperparameters, seed: int,
               scheme: str = "softmax") -> VariationalState:
    """Random starting point; deterministic in ``seed``.

    ``"softmax"`` draws rho and xi as softmaxes of standard normal entries;
    ``"kmeans"`` builds them from randomly seeded k-means runs (see
    ``_kmeans_start``). Either way the remaining parameters start at the
    prior, with a small random perturbation of the Dirichlet parameters.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    validate_collection(c)
    rng = np.random.default_rng(seed)
    J, K, L, T = c.n_cols, h.K, h.L, c.T
    if scheme == "kmeans":
        rho, xi_all = _kmeans_start(c, K, L, rng)
    else:
        rho = softmax_log(rng.standard_normal((J, K)), axis=1)
        xi_all = np.concatenate([softmax_log(rng.standard_normal((d.n_rows, K, L)), axis=2)
                                 for d in c.datasets])
    dir_p = np.stack([h.b0 + 0.01 * rng.uniform(size=(K, L)) for _ in range(T)])
    m0, k0, c0, d0 = (np.repeat(v[:, None], L, axis=1) for v in _priors(h, T))
    beta_bar = h.beta.value if isinstance(h.beta, FixedBeta) else 0.0
    return VariationalState(
        rho=rho, xi_all=xi_all, row_offsets=_pack(c).offsets.copy(), dir_p=dir_p,
        stick_a=np.ones(K - 1), stick_b=np.ones(K - 1),
        nig_m=m0, nig_k=k0, nig_c=c0, nig_d=d0,
        s1=float(h.a_alpha), s2=float(h.b_alpha), beta_bar=float(beta_bar),
    )


# -------------------------------------------------------------- CAVI steps


def update_column_assignments(state, c: DatasetCollection, h: Hyperparameters) -> np.ndarray:
    """Step 1: q(C_j)."""
    P = _pack(c)
    a, b, e = loglik_coefficients(state)
    return _k.column_update(state.rho, P.YT, P.Y2T, P.ds, state.xi_all, a, b, e,
                            expected_log_pi(state.stick_a, state.stick_b), state.beta_bar,
                            P.indptr, P.indices)


def update_row_assignments(state, c: DatasetCollection, h: Hyperparameters) -> np.ndarray:
    """Step 2: q(R_ik) for every row and candidate column cluster, stacked over datasets."""
    P = _pack(c)
    a, b, e = loglik_coefficients(state)
    return _k.row_update(state.rho, P.Y, P.Y2, P.ds, state.dir_p, a, b, e)


def update_omega(state, h: Hyperparameters) -> np.ndarray:
    """Step 3: (T, K, L) Dirichlet parameters of the row-mixture weights."""
    T = len(state.row_offsets) - 1
    ds = np.repeat(np.arange(T), np.diff(state.row_offsets)).astype(np.int64)
    return _k.omega_update(state.xi_all, ds, T, float(h.b0))


def update_sticks(state, h: Hyperparameters) -> tuple[np.ndarray, np.ndarray]:
    """Step 4 (computed as if beta = 0); the tail sum stops at K-1."""
    return _k.stick_update(state.rho, state.s1 / state.s2)


def update_atoms(state, c: DatasetCollection, h: Hyperparameters):
    """Step 5: NIG posteriors of the atoms, each a (T, L) array."""
    P = _pack(c)
    n, sy, sy2 = _k.atom_moments(state.rho, state.xi_all, P.Y, P.Y2, P.ds, P.T)
    return _k.atom_update(n, sy, sy2, *_priors(h, P.T), _EMPTY)


def update_alpha(state, h: Hyperparameters) -> tuple[float, float]:
    """Step 6: Gamma(s1, s2) for the stick-breaking concentration."""
    s2 = h.b_alpha - _k.stick_g_sum(state.stick_a, state.stick_b)
    if not s2 > 0:
        raise InvariantError("s2 must be positive")
    return h.a_alpha + state.K - 1.0, float(s2)


def beta_posterior(state, c: DatasetCollection, h: Hyperparameters) -> tuple[np.ndarray, np.ndarray]:
    """Grid values and normalized q*(beta) under the pseudo-likelihood approximation."""
    P = _pack(c)
    grid = np.asarray(h.beta.values, dtype=float)
    nb = _k.neighbour_sums(state.rho, P.indptr, P.indices)
    logq = _k.potts_pl_terms(state.rho, expected_log_pi(state.stick_a, state.stick_b), nb, grid)
    return grid, softmax_log(logq, axis=0)


def update_beta(state, c: DatasetCollection, h: Hyperparameters) -> float:
    """Step 7: posterior mean of the inverse temperature (identity if beta is fixed)."""
    if isinstance(h.beta, FixedBeta):
        return state.beta_bar
    grid, q = beta_posterior(state, c, h)
    return float(grid @ q)


def _globals(s, c, h) -> None:
    s.dir_p = update_omega(s, h)
    s.stick_a, s.stick_b = update_sticks(s, h)
    s.nig_m, s.nig_k, s.nig_c, s.nig_d = update_atoms(s, c, h)
    s.s1, s.s2 = update_alpha(s, h)


def prime_globals(state, c, h) -> VariationalState:
    """Steps 3-6 on the random start, then Step 2 and Steps 3-6 again.

    The first sweep opens with Step 1, which rebuilds rho from the atoms and
    the row assignments. Without priming the atoms all sit at the prior and
    the starting rho is discarded; fitting the row assignments to the
    starting rho first is what lets that rho steer the run.
    """
    s = state.copy()
    _globals(s, c, h)
    s.xi_all = update_row_assignments(s, c, h)
    _globals(s, c, h)
    return s


def cavi_sweep(state, c, h) -> VariationalState:
    """One pass of Steps 1-7, in order, each step seeing the previous ones."""
    s = state.copy()
    s.rho = update_column_assignments(s, c, h)
    s.xi_all = update_row_assignments(s, c, h)
    s.dir_p = update_omega(s, h)
    s.stick_a, s.stick_b = update_sticks(s, h)
    s.nig_m, s.nig_k, s.nig_c, s.nig_d = update_atoms(s, c, h)
    s.s1, s.s2 = update_alpha(s, h)
    s.beta_bar = update_beta(s, c, h)
    return s


# -------------------------------------------------------------------- ELBO

ELBO_TERMS = ("loglik", "R", "C", "v", "omega", "theta", "alpha")


def elbo_components(state, c: DatasetCollection, h: Hyperparameters) -> dict[str, float]:
    """Each expectation of the ELBO, keyed by the factor it belongs to.

    The C term is the pseudo-likelihood approximation of E[log p(C)] at
    beta_bar, minus the entropy term of q(C).
    """
    P = _pack(c)
    loglik_coefficients(state)  # positivity check
    vals = _k.elbo_components(
        state.rho, state.xi_all, P.Y, P.Y2, P.ds, state.dir_p, state.stick_a, state.stick_b,
        state.nig_m, state.nig_k, state.nig_c, state.nig_d, state.s1, state.s2, state.beta_bar,
        P.indptr, P.indices, *_priors(h, P.T), float(h.b0), float(h.a_alpha), float(h.b_alpha),
    )
    return dict(zip(ELBO_TERMS, (float(v) for v in vals)))


def elbo(state, c: DatasetCollection, h: Hyperparameters) -> float:
    return float(sum(elbo_components(state, c, h).values()))


# ----------------------------------------------------------- driver


def extract_partitions(state: VariationalState) -> PartitionEstimate:
    """Arg-max labels; row partitions only for occupied column clusters."""
    cols = np.argmax(state.rho, axis=1)
    occupied = tuple(int(k) for k in np.unique(cols))
    rows = {(t, k): np.argmax(x[:, k, :], axis=1) for t, x in enumerate(state.xi) for k in occupied}
    return PartitionEstimate(cols, rows, occupied)


@dataclass
class FitResult:
    state: VariationalState
    elbo_trace: list[float]
    n_iters: int
    seed: int
    converged: bool
    partitions: PartitionEstimate
    dataset_names: tuple[str, ...] = ()
    hyper: Hyperparameters | None = None
    start_elbos: list[float] = field(default_factory=list)

    @property
    def final_elbo(self) -> float:
        return self.elbo_trace[-1]

    def to_dict(self) -> dict:
        s, part = self.state, self.partitions
        T = len(s.xi)
        return {
            "schema_version": SCHEMA_VERSION,
            "datasets": list(self.dataset_names),
            "hyperparameters": self.hyper.to_dict() if self.hyper else None,
            "seed": self.seed,
            "converged": self.converged,
            "n_iters": self.n_iters,
            "final_elbo": self.final_elbo,
            "elbo_trace": list(self.elbo_trace),
            "start_elbos": list(self.start_elbos),
            "beta_bar": s.beta_bar,
            "column_labels": part.column_labels.tolist(),
            "occupied_ccs": list(part.occupied_ccs),
            "row_labels": [{str(k): part.row_labels[(t, k)].tolist() for k in part.occupied_ccs}
                           for t in range(T)],
            "nig": [{"m": s.nig_m[t].tolist(), "k": s.nig_k[t].tolist(),
                     "c": s.nig_c[t].tolist(), "d": s.nig_d[t].tolist()} for t in range(T)],
            "alpha": {"s1": s.s1, "s2": s.s2},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def run_single(c, h, seed: int, tol: float = 1e-5, max_iters: int = 500, init: str = "softmax"):
    """One CAVI run from a seeded start.

    Returns (state, elbo_trace, converged). The trace holds one ELBO per
    completed sweep; the stopping rule compares consecutive values, the
    first sweep being compared with the primed starting point. The sweep
    loop is compiled; it applies the same kernels as ``cavi_sweep``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    s = prime_globals(init_state(c, h, seed, init), c, h)
    P = _pack(c)
    fixed = isinstance(h.beta, FixedBeta)
    grid = np.zeros(1) if fixed else np.asarray(h.beta.values, dtype=float)
    try:
        out = _k.run_loop(
            s.rho, s.xi_all, s.dir_p, s.stick_a, s.stick_b, s.nig_m, s.nig_k, s.nig_c, s.nig_d,
            s.s1, s.s2, s.beta_bar, P.Y, P.Y2, P.YT, P.Y2T, P.ds, P.indptr, P.indices,
            *_priors(h, P.T), float(h.b0), float(h.a_alpha), float(h.b_alpha),
            grid, fixed, _EMPTY, float(tol), int(max_iters),
        )
    except ValueError as err:
        raise InvariantError(str(err)) from err
    rho, xi, dir_p, sa, sb, m, k, cc, d, s1, s2, beta_bar, trace, converged = out
    state = VariationalState(rho, xi, s.row_offsets, dir_p, sa, sb, m, k, cc, d,
                             float(s1), float(s2), float(beta_bar))
    return state, [float(v) for v in trace], bool(converged)


def _run_start(args):
    c, h, seed, tol, max_iters, init = args
    return run_single(c, h, seed, tol, max_iters, init)


def run_cavi(c: DatasetCollection, h: Hyperparameters, n_starts: int = 1, tol: float = 1e-5,
             max_iters: int = 500, seed: int = 0, n_jobs: int = 1, init: str = "mixed") -> FitResult:
    """Multi-start CAVI; keeps the run with the highest final ELBO.

    Start r uses seed + r. ``init`` is a scheme of ``init_state`` or
    ``"mixed"``, which alternates them: even starts "softmax", odd starts
    "kmeans". Ties go to the lowest start index, so the result
    does not depend on ``n_jobs``.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    validate_collection(c)
    if init != "mixed" and init not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {init!r}")
    schemes = [INIT_SCHEMES[r % 2] if init == "mixed" else init for r in range(n_starts)]
    jobs = [(c, h, seed + r, tol, max_iters, schemes[r]) for r in range(n_starts)]
    if n_jobs > 1 and n_starts > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            runs = list(pool.map(_run_start, jobs))
    else:
        runs = [_run_start(j) for j in jobs]
    finals = [tr[-1] for _, tr, _ in runs]
    best = int(np.argmax(finals))
    state, trace, converged = runs[best]
    logger.debug("best start %d of %d, ELBO %.6f", best, n_starts, finals[best])
    return FitResult(
        state=state, elbo_trace=trace, n_iters=len(trace), seed=seed + best, converged=converged,
        partitions=extract_partitions(state), dataset_names=tuple(d.name for d in c.datasets),
        hyper=h, start_elbos=finals,
    )

