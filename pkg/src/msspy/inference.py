"""Marginal MCMC for six species-discovery models.

Models
------
``IndepDP``, ``IndepPY``
    one Dirichlet (Pitman-Yor) process per group.
``AddDP``, ``AddPY``
    additive construction: group ``j`` draws from a shared process with
    probability ``eps_j`` and from its own process otherwise.
``HierDP``, ``HierPY``
    hierarchical construction sampled through the Chinese restaurant
    franchise.

Hyperparameter arrays use index 0 for the root or shared process and
``j + 1`` for group ``j``. Gamma priors are parameterized by shape and rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import _kernels as K
from .partitions import GroupedSample

MODELS = ("IndepDP", "IndepPY", "AddDP", "AddPY", "HierDP", "HierPY")
MH_SUBSTEPS = 10
ITERS_PER_STEP = 200
HIER_WARMUP = 1000


@dataclass(frozen=True)
class Hyperpriors:
    alpha_root: tuple = (1.0, 1.0)
    alpha_group: tuple = (1.0, 1.0)
    sigma_root: tuple = (1.0, 1.0)
    sigma_group: tuple = (1.0, 1.0)
    eps_weights: tuple = (0.15, 0.15, 0.7)


DEFAULT_HYPERPRIORS = {
    "IndepDP": Hyperpriors(alpha_group=(0.75, 1.0)),
    "IndepPY": Hyperpriors(alpha_group=(0.2, 1.0), sigma_group=(1.0, 3.0)),
    "AddDP": Hyperpriors(alpha_root=(0.5, 2.0), alpha_group=(6.0, 2.0)),
    "AddPY": Hyperpriors(alpha_root=(0.25, 4.0), alpha_group=(2.0, 2.0),
                         sigma_root=(1.0, 3.0), sigma_group=(1.0, 2.0)),
    "HierDP": Hyperpriors(alpha_root=(1.0, 1.0 / 3.0), alpha_group=(1.0, 0.5)),
    "HierPY": Hyperpriors(alpha_root=(1.0, 1.0), alpha_group=(1.0, 1.0),
                          sigma_root=(1.0, 2.0), sigma_group=(1.0, 2.0)),
}


@dataclass(frozen=True)
class StrategyModel:
    """One of the six models with its hyperpriors.

    ``pinned`` fixes hyperparameters instead of sampling them. Keys are
    ``alpha``, ``sigma`` (arrays over ``0..J``, index 0 for root/shared; NaN
    entries stay free) and ``eps`` (array over groups).
    """

    kind: str
    hyper: Hyperpriors | None = None
    pinned: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODELS:
            raise ValueError(f"unknown model {self.kind!r}; expected one of {MODELS}")
        if self.hyper is None:
            object.__setattr__(self, "hyper", DEFAULT_HYPERPRIORS[self.kind])
        unknown = set(self.pinned) - {"alpha", "sigma", "eps"}
        if unknown:
            raise ValueError(f"unknown pinned parameters {sorted(unknown)}")
        if not self.is_py and "sigma" in self.pinned:
            s = np.asarray(self.pinned["sigma"], dtype=float)
            if np.any(s[~np.isnan(s)] != 0):
                raise ValueError(f"{self.kind} has no discount parameters to pin")

    @property
    def is_py(self) -> bool:
        return self.kind.endswith("PY")

    @property
    def construction(self) -> str:
        return {"Ind": "independent", "Add": "additive", "Hie": "hierarchical"}[self.kind[:3]]

    @property
    def warmup(self) -> int:
        return HIER_WARMUP if self.construction == "hierarchical" else 0


@dataclass
class ChainState:
    """Mutable state of one chain. The chain owns it; do not share across threads.

    ``counts[j, d]`` is the number of observations of species ``d`` in group
    ``j``; species columns may come in any order. ``tables`` maps a
    ``(group, species)`` cell to its table sizes (hierarchical models);
    ``comp[d]`` is -1 for a shared species and the owning group otherwise
    (additive models).
    """

    model: StrategyModel
    counts: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    eps: np.ndarray
    tables: dict = field(default_factory=dict)
    comp: np.ndarray | None = None
    log_scale: np.ndarray | None = None
    accepted: np.ndarray | None = None
    tries: np.ndarray | None = None
    sweeps: int = 0

    @property
    def J(self) -> int:
        return self.counts.shape[0]

    @property
    def D(self) -> int:
        return self.counts.shape[1]

    def copy(self) -> "ChainState":
        return replace(self, counts=self.counts.copy(), alpha=self.alpha.copy(), sigma=self.sigma.copy(),
                       eps=self.eps.copy(), tables={k: list(v) for k, v in self.tables.items()},
                       comp=None if self.comp is None else self.comp.copy(),
                       log_scale=self.log_scale.copy(), accepted=self.accepted.copy(), tries=self.tries.copy())

    def acceptance_rates(self) -> np.ndarray:
        """MH acceptance rate per (sigma/alpha, component); NaN where unused."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.accepted / self.tries

    def check(self) -> None:
        """Raise ``AssertionError`` when the latent state disagrees with the counts."""
        c = self.counts
        assert np.all(c >= 0)
        assert np.all(self.alpha[1:] > 0) and np.all((self.sigma >= 0) & (self.sigma < 1))
        assert np.all((self.eps >= 0) & (self.eps <= 1))
        kind = self.model.construction
        if kind == "hierarchical":
            cells = {(j, d) for j, d in zip(*np.nonzero(c))}
            assert set(self.tables) == cells, "table cells differ from observed cells"
            for (j, d), ts in self.tables.items():
                assert all(t > 0 for t in ts) and sum(ts) == c[j, d]
            assert self.alpha[0] > 0
        if kind == "additive":
            assert self.comp is not None and self.comp.shape == (self.D,)
            for d in range(self.D):
                groups = np.flatnonzero(c[:, d])
                if len(groups) > 1:
                    assert self.comp[d] == -1, f"species {d} is seen in several groups but not shared"
                elif len(groups) == 1:
                    assert self.comp[d] in (-1, groups[0])
            assert self.alpha[0] > 0


def _as_counts(data) -> np.ndarray:
    if isinstance(data, GroupedSample):
        return np.array(data.freq, dtype=np.int64)
    arr = np.asarray(data, dtype=np.int64)
    if arr.ndim != 2 or np.any(arr < 0):
        raise ValueError("counts must be a non-negative J x D integer matrix")
    return arr.copy()


def _prior_arrays(model: StrategyModel, J: int):
    h = model.hyper
    a_alpha = np.array([h.alpha_root[0]] + [h.alpha_group[0]] * J, dtype=float)
    b_alpha = np.array([h.alpha_root[1]] + [h.alpha_group[1]] * J, dtype=float)
    a_sigma = np.array([h.sigma_root[0]] + [h.sigma_group[0]] * J, dtype=float)
    b_sigma = np.array([h.sigma_root[1]] + [h.sigma_group[1]] * J, dtype=float)
    return a_alpha, b_alpha, a_sigma, b_sigma


def _pins(model: StrategyModel, J: int):
    def arr(key, size):
        v = model.pinned.get(key)
        if v is None:
            return np.full(size, np.nan)
        v = np.broadcast_to(np.asarray(v, dtype=float), (size,)).copy()
        return v
    return arr("alpha", J + 1), arr("sigma", J + 1), arr("eps", J)


def init_chain(model: StrategyModel, data, rng: np.random.Generator) -> ChainState:
    """Start a chain: hyperparameters from the priors, latent state by sequential seating."""
    counts = _as_counts(data)
    J = counts.shape[0]
    a_alpha, b_alpha, a_sigma, b_sigma = _prior_arrays(model, J)
    alpha = rng.gamma(a_alpha, 1.0 / b_alpha)
    sigma = rng.beta(a_sigma, b_sigma) if model.is_py else np.zeros(J + 1)
    w = np.asarray(model.hyper.eps_weights, dtype=float)
    pick = rng.choice(3, size=J, p=w / w.sum())
    eps = np.where(pick == 0, 0.0, np.where(pick == 1, 1.0, rng.random(J)))
    pa, ps, pe = _pins(model, J)
    alpha = np.where(np.isnan(pa), alpha, pa)
    if model.is_py:
        sigma = np.where(np.isnan(ps), sigma, ps)
    eps = np.where(np.isnan(pe), eps, pe)
    if model.construction == "independent":
        alpha[0], sigma[0] = 1.0, 0.0
    if model.construction != "additive":
        eps[:] = 0.0
    state = ChainState(model, np.zeros((J, 0), dtype=np.int64), alpha, sigma, eps,
                       comp=np.zeros(0, dtype=np.int64) if model.construction == "additive" else None,
                       log_scale=np.zeros((2, J + 1)), accepted=np.zeros((2, J + 1)),
                       tries=np.zeros((2, J + 1)))
    extend_data(state, counts, rng)
    return state


def extend_data(state: ChainState, counts, rng: np.random.Generator) -> None:
    """Bring the chain up to ``counts`` (a superset of its current data).

    New species must be appended as new columns. New observations are seated
    one at a time from their conditional given the current state, group by
    group.
    """
    counts = _as_counts(counts)
    if counts.shape[0] != state.J or counts.shape[1] < state.D:
        raise ValueError("new counts must keep the groups and extend the species columns")
    old = np.zeros_like(counts)
    old[:, :state.D] = state.counts
    diff = counts - old
    if np.any(diff < 0):
        raise ValueError("new counts must contain the current data")
    if state.comp is not None and counts.shape[1] > state.D:
        state.comp = np.concatenate([state.comp, np.full(counts.shape[1] - state.D, -2, dtype=np.int64)])
    if np.any(counts.sum(axis=0) == 0):
        raise ValueError("every species column needs at least one observation")
    state.counts = old
    for j in range(state.J):
        for d in np.flatnonzero(diff[j]):
            for _ in range(diff[j, d]):
                _seat(state, j, int(d), rng)


def _seat(state: ChainState, j: int, d: int, rng) -> None:
    m = state.model.construction
    a, s = state.alpha, state.sigma
    c = state.counts
    if m == "hierarchical":
        ts = state.tables.setdefault((j, d), [])
        T_j = sum(len(v) for (g, _), v in state.tables.items() if g == j)
        l_d = sum(len(v) for (_, e), v in state.tables.items() if e == d)
        L = sum(len(v) for v in state.tables.values())
        D_plus = sum(1 for e in range(state.D) if c[:, e].sum() > 0)
        root = (l_d - s[0]) / (a[0] + L) if l_d else (a[0] + s[0] * D_plus) / (a[0] + L) if L else 1.0
        w = [t - s[j + 1] for t in ts] + [(a[j + 1] + s[j + 1] * T_j) * root]
        k = int(np.searchsorted(np.cumsum(w), rng.random() * sum(w), side="right"))
        if k >= len(ts):
            ts.append(1)
        else:
            ts[k] += 1
    elif m == "additive":
        owners = np.flatnonzero(c[:, d])
        if len(owners) and (len(owners) > 1 or owners[0] != j):
            state.comp[d] = -1
        elif not len(owners):
            shared = state.comp == -1
            K0, n0 = int(shared.sum()), int(c[:, shared].sum())
            own = state.comp == j
            Kj, nj = int(own.sum()), int(c[j, own].sum())
            ws = state.eps[j] * K.new_mass(a[0], s[0], K0, n0)
            wi = (1 - state.eps[j]) * K.new_mass(a[j + 1], s[j + 1], Kj, nj)
            state.comp[d] = -1 if rng.random() * (ws + wi) < ws else j
    c[j, d] += 1


def _seed_numba(rng):
    K.seed(int(rng.integers(2 ** 31 - 1)))


def _sweeps(state: ChainState, n_iter: int, rng: np.random.Generator) -> dict:
    model = state.model
    J = state.J
    a_alpha, b_alpha, a_sigma, b_sigma = _prior_arrays(model, J)
    pa, ps, pe = _pins(model, J)
    pin_alpha, pin_sigma, pin_eps = ~np.isnan(pa), ~np.isnan(ps), ~np.isnan(pe)
    if not model.is_py:
        pin_sigma[:] = True
    trace = {"alpha": np.empty((n_iter, J + 1)), "sigma": np.empty((n_iter, J + 1)),
             "eps": np.tile(state.eps, (n_iter, 1)), "discovery": np.empty((n_iter, J)),
             "D": np.full(n_iter, state.D)}
    _seed_numba(rng)
    args_h = (model.is_py, state.alpha, state.sigma, a_alpha, b_alpha, a_sigma, b_sigma)
    if model.construction == "independent":
        pin_alpha[0] = pin_sigma[0] = True
        K.sweeps_independent(state.counts, *args_h, pin_alpha, pin_sigma, state.log_scale, state.accepted,
                             state.tries, state.sweeps, n_iter, MH_SUBSTEPS,
                             trace["alpha"], trace["sigma"], trace["discovery"])
    elif model.construction == "hierarchical":
        cells = list(state.tables)
        C = len(cells)
        cap = max([sum(v) for v in state.tables.values()], default=1)
        table_sizes = np.zeros((C, cap), dtype=np.int64)
        n_slots = np.zeros(C, dtype=np.int64)
        for i, key in enumerate(cells):
            ts = state.tables[key]
            table_sizes[i, :len(ts)] = ts
            n_slots[i] = len(ts)
        cell_group = np.array([k[0] for k in cells], dtype=np.int64)
        cell_dish = np.array([k[1] for k in cells], dtype=np.int64)
        group_T = np.bincount(cell_group, weights=n_slots, minlength=J).astype(np.int64)
        dish_l = np.bincount(cell_dish, weights=n_slots, minlength=state.D).astype(np.int64)
        group_n = state.counts.sum(axis=1).astype(np.int64)
        K.sweeps_hierarchical(cell_group, cell_dish, table_sizes, n_slots, group_T, group_n, dish_l,
                              *args_h, pin_alpha, pin_sigma, state.log_scale, state.accepted, state.tries,
                              state.sweeps, n_iter, MH_SUBSTEPS, trace["alpha"], trace["sigma"],
                              trace["discovery"])
        for i, key in enumerate(cells):
            row = table_sizes[i, :n_slots[i]]
            state.tables[key] = [int(t) for t in row if t > 0]
    else:
        owners = (state.counts > 0).sum(axis=0)
        owner = np.where(owners == 1, state.counts.argmax(axis=0), -1).astype(np.int64)
        w = np.asarray(model.hyper.eps_weights, dtype=float)
        K.sweeps_additive(state.counts, owner, state.comp, *args_h[:3], state.eps, *args_h[3:],
                          pin_alpha, pin_sigma, pin_eps, w / w.sum(), state.log_scale, state.accepted,
                          state.tries, state.sweeps, n_iter, MH_SUBSTEPS, trace["alpha"], trace["sigma"],
                          trace["eps"], trace["discovery"])
    state.sweeps += n_iter
    return trace


def gibbs_step(state: ChainState, rng: np.random.Generator) -> ChainState:
    """One full sweep (latent state, then hyperparameters), in place."""
    _sweeps(state, 1, rng)
    return state


@dataclass(frozen=True)
class DiscoveryEstimate:
    mean: np.ndarray
    mcse: np.ndarray
    trace: dict


def batch_means_mcse(x: np.ndarray) -> float:
    """Monte Carlo standard error of a chain average by batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    b = max(int(math.sqrt(n)), 2)
    m = n // b
    means = x[: m * b].reshape(m, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0


def discovery_probability(trace: Mapping, j: int, num_iterations: int | None = None):
    """Posterior mean and MCSE of group ``j``'s discovery probability.

    ``trace`` is the sweep trace of :func:`run_chain`; the last
    ``num_iterations`` sweeps are averaged.
    """
    x = np.asarray(trace["discovery"])[:, j]
    if num_iterations is not None:
        if num_iterations < 1:
            raise ValueError("num_iterations must be at least 1")
        x = x[-num_iterations:]
    return float(x.mean()), batch_means_mcse(x)


def run_chain(model: StrategyModel, data, iterations: int = ITERS_PER_STEP,
              warm_state: ChainState | None = None, rng: np.random.Generator | None = None):
    """Run the sampler and estimate every group's discovery probability.

    Without ``warm_state`` the chain is initialized and, for hierarchical
    models, run for ``model.warmup`` extra sweeps that are not averaged.
    With it, the state is extended to ``data`` and continued.

    Returns
    -------
    state : ChainState
    estimate : DiscoveryEstimate
        Averages over the ``iterations`` post-warm-up sweeps.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    if rng is None:
        raise ValueError("run_chain needs an rng")
    if warm_state is None:
        state = init_chain(model, data, rng)
        if model.warmup:
            _sweeps(state, model.warmup, rng)
    else:
        if warm_state.model != model:
            raise ValueError("warm state belongs to a different model")
        state = warm_state
        extend_data(state, data, rng)
    trace = _sweeps(state, iterations, rng)
    est = [discovery_probability(trace, j) for j in range(state.J)]
    return state, DiscoveryEstimate(np.array([e[0] for e in est]), np.array([e[1] for e in est]), trace)


def latent_signature(state: ChainState):
    """Hashable summary of the latent partition (used to compare posteriors)."""
    kind = state.model.construction
    if kind == "hierarchical":
        return tuple(sorted((k, tuple(sorted(v))) for k, v in state.tables.items()))
    if kind == "additive":
        return tuple(int(x) for x in state.comp)
    return ()


def chain_trace_header(J: int) -> list[str]:
    return (["iteration"] + [f"alpha_{i}" for i in range(J + 1)] + [f"sigma_{i}" for i in range(J + 1)]
            + [f"eps_{j + 1}" for j in range(J)] + ["D"] + [f"discovery_{j + 1}" for j in range(J)])


def chain_trace_rows(trace: Mapping, start: int = 1):
    """Rows ``(iteration, alpha..., sigma..., eps..., D, discovery...)`` for CSV export.

    Index 0 of ``alpha`` and ``sigma`` is the root or shared process.
    """
    n = len(trace["discovery"])
    for i in range(n):
        yield [start + i, *trace["alpha"][i], *trace["sigma"][i], *trace["eps"][i], int(trace["D"][i]),
               *trace["discovery"][i]]
