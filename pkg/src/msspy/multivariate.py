"""Multivariate species sampling: constructions, partially exchangeable
partition probabilities, forward simulation and the multivariate urn.

Four constructions are provided. In every one of them the species atoms
are i.i.d. from a non-atomic base, so only the weight array matters and a
grouped sample is summarized by its frequency matrix.

``Independent``
    one species sampling process per group, atoms never shared.
``Hierarchical``
    each group's process draws its atoms from a common discrete root
    process (Chinese restaurant franchise).
``Nested``
    groups are clustered by a root process; groups in the same cluster share
    one draw of the within-cluster process.
``Additive``
    group ``j`` mixes a shared process (weight ``eps[j]``) with an
    idiosyncratic one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .eppf import (
    DM, DP, GN, NEG_INF, PYP, EmpiricalWeights, EppfFamily, MCEstimate, PredictiveWeights,
    _sample_gnedin_M, distinct_index_sums, draw_index, family_weights, log_eppf, seat_weights,
    stick_breaking_weights,
)
from .partitions import (
    GroupedSample, canonicalize, enumerate_partitions, grouped_from_observations,
    integer_partitions_with_counts,
)

EXACT_MAX_N = 10


# --- constructions ----------------------------------------------------------


@dataclass(frozen=True)
class Independent:
    families: tuple

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        if not self.families:
            raise ValueError("at least one group is required")

    regular = True


@dataclass(frozen=True)
class Hierarchical:
    children: tuple
    root: EppfFamily

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("at least one group is required")

    regular = True


@dataclass(frozen=True)
class Nested:
    """Nested process; the number of groups is taken from the data."""

    root: EppfFamily
    within: EppfFamily

    regular = True


@dataclass(frozen=True)
class Additive:
    eps: tuple
    shared: EppfFamily
    idio: tuple

    def __post_init__(self):
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        object.__setattr__(self, "idio", tuple(self.idio))
        if not self.eps:
            raise ValueError("at least one group is required")
        if len(self.eps) != len(self.idio):
            raise ValueError("eps and idio must have one entry per group")
        if any(not 0 <= e <= 1 for e in self.eps):
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")

    regular = True


MsspSpec = Union[Independent, Hierarchical, Nested, Additive]


def spec_groups(spec: MsspSpec) -> int | None:
    """Number of groups fixed by the construction (``None`` for nested ones)."""
    if isinstance(spec, Independent):
        return len(spec.families)
    if isinstance(spec, Hierarchical):
        return len(spec.children)
    if isinstance(spec, Additive):
        return len(spec.eps)
    if isinstance(spec, Nested):
        return None
    raise TypeError(f"unknown spec {spec!r}")


def _check_J(spec, J):
    expected = spec_groups(spec)
    if expected is not None and expected != J:
        raise ValueError(f"construction has {expected} groups but the data has {J}")


# --- latent states ----------------------------------------------------------


@dataclass(frozen=True)
class NoLatent:
    """Latent state of independent processes (there is none)."""


@dataclass(frozen=True)
class FranchiseState:
    """Table of each observation and species (dish) served at each table.

    ``tables[j][i]`` is the 0-based table of observation ``i`` in group
    ``j``, in order of arrival within the group; ``dishes[j][t]`` is the
    global species index of table ``t`` of group ``j``.
    """

    tables: tuple
    dishes: tuple

    def table_sizes(self, j: int) -> list[int]:
        out = [0] * len(self.dishes[j])
        for t in self.tables[j]:
            out[t] += 1
        return out

    def tables_per_dish(self, D: int) -> list[int]:
        out = [0] * D
        for row in self.dishes:
            for d in row:
                out[d] += 1
        return out


@dataclass(frozen=True)
class ClusterState:
    """Cluster of each group (0-based, order of arrival), ``None`` if unassigned."""

    clusters: tuple


@dataclass(frozen=True)
class ComponentState:
    """``flags[j][i]`` is True when observation ``i`` of group ``j`` comes
    from the shared component."""

    flags: tuple


AugmentedState = Union[NoLatent, FranchiseState, ClusterState, ComponentState]


def check_latent(spec: MsspSpec, grouped: GroupedSample, latent: AugmentedState) -> None:
    """Raise ``ValueError`` when ``latent`` cannot have generated ``grouped``."""
    _check_J(spec, grouped.J)
    if isinstance(spec, Independent):
        if not isinstance(latent, NoLatent):
            raise ValueError("independent specs carry no latent state")
    elif isinstance(spec, Hierarchical):
        if not isinstance(latent, FranchiseState):
            raise ValueError("hierarchical specs need a FranchiseState")
        if len(latent.tables) != grouped.J or len(latent.dishes) != grouped.J:
            raise ValueError("latent state has the wrong number of groups")
        for j, obs in enumerate(grouped.labels):
            tabs = latent.tables[j]
            if len(tabs) != len(obs):
                raise ValueError(f"group {j}: table labels do not cover every observation")
            if tabs and canonicalize(tabs).labels != tuple(t + 1 for t in tabs):
                raise ValueError(f"group {j}: tables are not in order of arrival")
            if len(latent.dishes[j]) != (max(tabs) + 1 if tabs else 0):
                raise ValueError(f"group {j}: every table needs exactly one dish")
            for t, d in zip(tabs, obs):
                if latent.dishes[j][t] != d:
                    raise ValueError(f"group {j}: table {t} serves a different species")
    elif isinstance(spec, Nested):
        if not isinstance(latent, ClusterState) or len(latent.clusters) != grouped.J:
            raise ValueError("nested specs need a ClusterState with one entry per group")
        labelled = [c for c in latent.clusters if c is not None]
        if labelled and canonicalize(labelled).labels != tuple(c + 1 for c in labelled):
            raise ValueError("cluster labels are not in order of arrival")
        owner: dict = {}
        for j, obs in enumerate(grouped.labels):
            if obs and latent.clusters[j] is None:
                raise ValueError(f"group {j} has observations but no cluster")
            for d in set(obs):
                if owner.setdefault(d, latent.clusters[j]) != latent.clusters[j]:
                    raise ValueError(f"species {d} is shared by groups in different clusters")
    elif isinstance(spec, Additive):
        if not isinstance(latent, ComponentState) or len(latent.flags) != grouped.J:
            raise ValueError("additive specs need a ComponentState with one entry per group")
        _species_components(grouped, latent)
    else:
        raise TypeError(f"unknown spec {spec!r}")


def _species_components(grouped, latent: ComponentState) -> list:
    """Component of each species: ``-1`` for shared, else the owning group."""
    comp = [None] * grouped.D
    for j, obs in enumerate(grouped.labels):
        if len(latent.flags[j]) != len(obs):
            raise ValueError(f"group {j}: flags do not cover every observation")
        for d, f in zip(obs, latent.flags[j]):
            c = -1 if f else j
            if comp[d] is None:
                comp[d] = c
            elif comp[d] != c:
                raise ValueError(f"species {d} is assigned to two components")
    return comp


# --- forward simulation -----------------------------------------------------


def sample_array(spec: MsspSpec, sizes: Sequence[int], rng: np.random.Generator):
    """Forward-simulate a grouped sample and the latent state behind it.

    Groups are filled one after another in order, so species receive global
    indices by order of arrival by group.

    Returns
    -------
    grouped : GroupedSample
    latent : AugmentedState
    """
    labels, latent = simulate_labels(spec, sizes, rng)
    return GroupedSample(labels), latent


def simulate_labels(spec: MsspSpec, sizes: Sequence[int], rng: np.random.Generator):
    """Lightweight :func:`sample_array`: species labels as nested tuples."""
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes):
        raise ValueError("group sizes must be non-negative")
    _check_J(spec, len(sizes))
    if isinstance(spec, Independent):
        labels, D = [], 0
        for fam, I in zip(spec.families, sizes):
            counts: list[int] = []
            row = []
            for _ in range(I):
                k = draw_index(seat_weights(fam, counts), rng.random())
                if k == len(counts):
                    counts.append(0)
                counts[k] += 1
                row.append(k)
            labels.append(tuple(D + k for k in row))
            D += len(counts)
        return tuple(labels), NoLatent()
    if isinstance(spec, Hierarchical):
        dish_tables: list[int] = []
        labels, tables, dishes = [], [], []
        for fam, I in zip(spec.children, sizes):
            tcounts: list[int] = []
            tdish: list[int] = []
            row, tabs = [], []
            for _ in range(I):
                t = draw_index(seat_weights(fam, tcounts), rng.random())
                if t == len(tcounts):
                    d = draw_index(seat_weights(spec.root, dish_tables), rng.random())
                    if d == len(dish_tables):
                        dish_tables.append(0)
                    dish_tables[d] += 1
                    tcounts.append(0)
                    tdish.append(d)
                tcounts[t] += 1
                tabs.append(t)
                row.append(tdish[t])
            labels.append(tuple(row))
            tables.append(tuple(tabs))
            dishes.append(tuple(tdish))
        return tuple(labels), FranchiseState(tuple(tables), tuple(dishes))
    if isinstance(spec, Nested):
        cluster_sizes: list[int] = []
        cluster_counts: list[list[int]] = []
        cluster_ids: list[list[int]] = []
        clusters: list = [None] * len(sizes)
        labels, D = [], 0
        for j, I in enumerate(sizes):
            row = []
            if I:
                r = draw_index(seat_weights(spec.root, cluster_sizes), rng.random())
                if r == len(cluster_sizes):
                    cluster_sizes.append(0)
                    cluster_counts.append([])
                    cluster_ids.append([])
                cluster_sizes[r] += 1
                clusters[j] = r
                counts, ids = cluster_counts[r], cluster_ids[r]
                for _ in range(I):
                    k = draw_index(seat_weights(spec.within, counts), rng.random())
                    if k == len(counts):
                        counts.append(0)
                        ids.append(D)
                        D += 1
                    counts[k] += 1
                    row.append(ids[k])
            labels.append(tuple(row))
        return tuple(labels), ClusterState(tuple(clusters))
    if isinstance(spec, Additive):
        shared_counts: list[int] = []
        shared_ids: list[int] = []
        labels, flags, D = [], [], 0
        for j, I in enumerate(sizes):
            counts, ids = [], []
            row, frow = [], []
            for _ in range(I):
                f = rng.random() < spec.eps[j]
                fam, c, i_ = (spec.shared, shared_counts, shared_ids) if f else (spec.idio[j], counts, ids)
                k = draw_index(seat_weights(fam, c), rng.random())
                if k == len(c):
                    c.append(0)
                    i_.append(D)
                    D += 1
                c[k] += 1
                row.append(i_[k])
                frow.append(bool(f))
            labels.append(tuple(row))
            flags.append(tuple(frow))
        return tuple(labels), ComponentState(tuple(flags))
    raise TypeError(f"unknown spec {spec!r}")


# --- augmented pEPPF --------------------------------------------------------


def _safe_log_eppf(fam, sizes):
    return log_eppf(fam, sizes) if sizes else 0.0


def _xlogy(k, p):
    if k == 0:
        return 0.0
    return math.log(p) * k if p > 0 else NEG_INF


def log_peppf_augmented(spec: MsspSpec, grouped: GroupedSample, latent: AugmentedState) -> float:
    """Joint log-probability of the grouped partition and a latent state."""
    check_latent(spec, grouped, latent)
    freq = grouped.freq
    if isinstance(spec, Independent):
        if np.any((freq > 0).sum(axis=0) > 1):
            return NEG_INF
        return sum(_safe_log_eppf(f, [int(x) for x in row if x]) for f, row in zip(spec.families, freq))
    if isinstance(spec, Hierarchical):
        out = _safe_log_eppf(spec.root, latent.tables_per_dish(grouped.D))
        for j, fam in enumerate(spec.children):
            out += _safe_log_eppf(fam, latent.table_sizes(j))
        return out
    if isinstance(spec, Nested):
        labelled = [c for c in latent.clusters if c is not None]
        R = max(labelled) + 1 if labelled else 0
        out = _safe_log_eppf(spec.root, [labelled.count(r) for r in range(R)])
        for r in range(R):
            members = [j for j, c in enumerate(latent.clusters) if c == r]
            pooled = freq[members].sum(axis=0)
            out += _safe_log_eppf(spec.within, [int(x) for x in pooled if x])
        return out
    if isinstance(spec, Additive):
        comp = _species_components(grouped, latent)
        return _log_additive(spec, freq, comp)
    raise TypeError(f"unknown spec {spec!r}")


def _log_additive(spec, freq, comp):
    out = 0.0
    shared = [d for d, c in enumerate(comp) if c == -1]
    for j, e in enumerate(spec.eps):
        l0 = int(freq[j, shared].sum())
        lj = int(freq[j].sum()) - l0
        out += _xlogy(l0, e) + _xlogy(lj, 1 - e)
    if out == NEG_INF:
        return out
    out += _safe_log_eppf(spec.shared, [int(freq[:, d].sum()) for d in shared])
    for j, fam in enumerate(spec.idio):
        out += _safe_log_eppf(fam, [int(freq[j, d]) for d, c in enumerate(comp) if c == j])
    return out


# --- latent enumeration -----------------------------------------------------


def _connected_groups(grouped) -> list[list[int]]:
    """Non-empty groups linked by shared species (union-find components)."""
    parent = list(range(grouped.J))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for d in range(grouped.D):
        owners = np.flatnonzero(grouped.freq[:, d])
        for o in owners[1:]:
            parent[find(int(o))] = find(int(owners[0]))
    comps: dict = {}
    for j in range(grouped.J):
        if grouped.sizes[j]:
            comps.setdefault(find(j), []).append(j)
    return list(comps.values())


def enumerate_latent(spec: MsspSpec, grouped: GroupedSample) -> Iterator[AugmentedState]:
    """Every latent state admissible for ``grouped`` (empty nested groups unassigned)."""
    _check_J(spec, grouped.J)
    if grouped.n > EXACT_MAX_N:
        raise ValueError(f"latent enumeration is limited to n <= {EXACT_MAX_N}")
    if isinstance(spec, Independent):
        yield NoLatent()
    elif isinstance(spec, Hierarchical):
        per_group = [list(_group_seatings(obs)) for obs in grouped.labels]
        for combo in itertools.product(*per_group):
            yield FranchiseState(tuple(c[0] for c in combo), tuple(c[1] for c in combo))
    elif isinstance(spec, Nested):
        comps = _connected_groups(grouped)
        if not comps:
            yield ClusterState(tuple([None] * grouped.J))
            return
        for p in enumerate_partitions(len(comps)):
            clusters: list = [None] * grouped.J
            for lab, members in zip(p.labels, comps):
                for j in members:
                    clusters[j] = lab
            labelled = [c for c in clusters if c is not None]
            relabel = {}
            for c in labelled:
                relabel.setdefault(c, len(relabel))
            yield ClusterState(tuple(None if c is None else relabel[c] for c in clusters))
    elif isinstance(spec, Additive):
        owners = [np.flatnonzero(grouped.freq[:, d]) for d in range(grouped.D)]
        free = [d for d in range(grouped.D) if len(owners[d]) == 1]
        for choice in itertools.product((True, False), repeat=len(free)):
            shared = [True] * grouped.D
            for d, c in zip(free, choice):
                shared[d] = c
            yield ComponentState(tuple(tuple(shared[d] for d in obs) for obs in grouped.labels))
    else:
        raise TypeError(f"unknown spec {spec!r}")


def _group_seatings(obs):
    """All seatings of one group's observations at single-species tables."""
    if not obs:
        yield (), ()
        return
    cells: dict = {}
    for i, d in enumerate(obs):
        cells.setdefault(d, []).append(i)
    keys = list(cells)
    for parts in itertools.product(*(enumerate_partitions(len(cells[d])) for d in keys)):
        tags = [None] * len(obs)
        for d, p in zip(keys, parts):
            for pos, lab in zip(cells[d], p.labels):
                tags[pos] = (d, lab)
        tabs = tuple(a - 1 for a in canonicalize(tags).labels)
        dishes = [None] * (max(tabs) + 1)
        for t, d in zip(tabs, obs):
            dishes[t] = d
        yield tabs, tuple(dishes)


# --- marginal pEPPF ---------------------------------------------------------


def log_peppf(spec: MsspSpec, grouped: GroupedSample, num_samples: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Log partially exchangeable partition probability of ``grouped``.

    Exact for ``n <= 10`` by summing the augmented pEPPF over every latent
    state. Larger samples need ``num_samples`` (and ``rng``): the latent
    state is then integrated by importance sampling.
    """
    _check_J(spec, grouped.J)
    if grouped.n == 0:
        return 0.0
    if isinstance(spec, Independent):
        return log_peppf_augmented(spec, grouped, NoLatent())
    if grouped.n <= EXACT_MAX_N:
        if isinstance(spec, Hierarchical):
            return _log_peppf_hier_exact(spec, grouped)
        terms = [log_peppf_augmented(spec, grouped, z) for z in enumerate_latent(spec, grouped)]
        return float(logsumexp(terms)) if terms else NEG_INF
    if num_samples is None:
        raise ValueError(f"n={grouped.n} exceeds the exact limit {EXACT_MAX_N}; pass num_samples for Monte Carlo")
    if rng is None:
        raise ValueError("Monte Carlo evaluation needs an rng")
    return _log_peppf_importance(spec, grouped, int(num_samples), rng)


def _log_peppf_hier_exact(spec, grouped):
    # Child EPPFs depend on table sizes only and the root EPPF on the number
    # of tables per species, so each (group, species) cell is summed over
    # integer partitions weighted by their number of set partitions.
    cells = [(j, d, int(grouped.freq[j, d])) for j in range(grouped.J) for d in range(grouped.D)
             if grouped.freq[j, d]]
    options = [list(integer_partitions_with_counts(c)) for _, _, c in cells]
    terms = []
    for combo in itertools.product(*options):
        table_sizes = [[] for _ in range(grouped.J)]
        per_dish = [0] * grouped.D
        logm = 0.0
        for (j, d, _), (parts, m) in zip(cells, combo):
            table_sizes[j].extend(parts)
            per_dish[d] += len(parts)
            logm += math.log(m)
        val = logm + _safe_log_eppf(spec.root, per_dish)
        for j, fam in enumerate(spec.children):
            val += _safe_log_eppf(fam, table_sizes[j])
        terms.append(val)
    return float(logsumexp(terms))


def _log_peppf_importance(spec, grouped, num_samples, rng):
    freq = grouped.freq
    logw = np.empty(num_samples)
    if isinstance(spec, Hierarchical):
        proposal = DP(1.0)
        cells = [(j, d, int(freq[j, d])) for j in range(grouped.J) for d in range(grouped.D) if freq[j, d]]
        for s in range(num_samples):
            table_sizes = [[] for _ in range(grouped.J)]
            per_dish = [0] * grouped.D
            lq = 0.0
            for j, d, c in cells:
                parts = _crp_sizes(c, rng)
                lq += log_eppf(proposal, parts)
                table_sizes[j].extend(parts)
                per_dish[d] += len(parts)
            val = _safe_log_eppf(spec.root, per_dish)
            for j, fam in enumerate(spec.children):
                val += _safe_log_eppf(fam, table_sizes[j])
            logw[s] = val - lq
    elif isinstance(spec, Nested):
        comps = _connected_groups(grouped)
        proposal = DP(1.0)
        for s in range(num_samples):
            parts = _crp_labels(len(comps), rng)
            clusters: list = [None] * grouped.J
            for lab, members in zip(parts, comps):
                for j in members:
                    clusters[j] = lab
            relabel: dict = {}
            for c in clusters:
                if c is not None:
                    relabel.setdefault(c, len(relabel))
            z = ClusterState(tuple(None if c is None else relabel[c] for c in clusters))
            sizes = [parts.count(r) for r in range(max(parts) + 1)]
            logw[s] = log_peppf_augmented(spec, grouped, z) - log_eppf(proposal, sizes)
    elif isinstance(spec, Additive):
        owners = (freq > 0).sum(axis=0)
        free = np.flatnonzero(owners == 1)
        home = freq.argmax(axis=0)
        for s in range(num_samples):
            comp = [-1] * grouped.D
            for d in free:
                if rng.random() < 0.5:
                    comp[d] = int(home[d])
            logw[s] = _log_additive(spec, freq, comp) + len(free) * math.log(2)
    else:
        raise TypeError(f"unknown spec {spec!r}")
    return float(logsumexp(logw) - math.log(num_samples))


def _crp_labels(n, rng):
    counts: list[int] = []
    labels = []
    for _ in range(n):
        k = draw_index(counts + [1.0], rng.random())
        if k == len(counts):
            counts.append(0)
        counts[k] += 1
        labels.append(k)
    return labels


def _crp_sizes(n, rng):
    labels = _crp_labels(n, rng)
    return [labels.count(k) for k in range(max(labels) + 1)]


# --- weight-based Monte Carlo ------------------------------------------------


def _child_weights(fam, beta, rng):
    """Weights of a child process whose base is the discrete law ``beta`` (S, H)."""
    S, H = beta.shape
    if isinstance(fam, DP) or (isinstance(fam, PYP) and fam.sigma == 0):
        g = rng.gamma(fam.alpha * beta + 1e-300)
        tot = g.sum(axis=1, keepdims=True)
        return g / np.where(tot > 0, tot, 1.0)
    out = np.zeros((S, H))
    cum = np.cumsum(beta, axis=1)
    cum /= cum[:, -1:]
    if isinstance(fam, PYP):
        sticks = stick_breaking_weights(fam.sigma, fam.alpha, H, rng, size=S)[0]
        for s in range(S):
            atoms = np.minimum(np.searchsorted(cum[s], rng.random(H)), H - 1)
            np.add.at(out[s], atoms, sticks[s])
        return out
    if isinstance(fam, (DM, GN)):
        Ms = np.full(S, fam.M) if isinstance(fam, DM) else _sample_gnedin_M(fam.gamma, S, rng).astype(np.int64)
        tau = fam.tau if isinstance(fam, DM) else 1.0
        for s in range(S):
            m = int(min(Ms[s], 10 ** 6))
            atoms = np.minimum(np.searchsorted(cum[s], rng.random(m)), H - 1)
            np.add.at(out[s], atoms, rng.gamma(tau, size=m))
        return out / out.sum(axis=1, keepdims=True)
    raise TypeError(f"no weight representation for child family {fam!r}")


def _weight_array(spec, J, T, rng, S):
    """Weight arrays ``pi[s, j, h]`` for ``S`` draws."""
    if isinstance(spec, Independent):
        out = np.zeros((S, J, J * T))
        for j, fam in enumerate(spec.families):
            out[:, j, j * T:(j + 1) * T] = _pad(family_weights(fam, T, rng, S), T)
        return out
    if isinstance(spec, Hierarchical):
        beta = _pad(family_weights(spec.root, T, rng, S), T)
        beta = np.concatenate([beta, np.clip(1 - beta.sum(axis=1, keepdims=True), 0, None)], axis=1)
        return np.stack([_child_weights(f, beta, rng) for f in spec.children], axis=1)
    if isinstance(spec, Additive):
        out = np.zeros((S, J, (J + 1) * T))
        beta0 = _pad(family_weights(spec.shared, T, rng, S), T)
        for j, (e, fam) in enumerate(zip(spec.eps, spec.idio)):
            out[:, j, :T] = e * beta0
            out[:, j, (j + 1) * T:(j + 2) * T] = (1 - e) * _pad(family_weights(fam, T, rng, S), T)
        return out
    if isinstance(spec, Nested):
        omega = _pad(family_weights(spec.root, T, rng, S), T)
        cum = np.cumsum(omega, axis=1)
        u = rng.random((S, J)) * cum[:, -1:]
        c = (cum[:, None, :] <= u[:, :, None]).sum(axis=2)
        # slot of each group: index of the first group in the same cluster
        same = c[:, :, None] == c[:, None, :]
        slot = same.argmax(axis=2)
        within = _pad(family_weights(spec.within, T, rng, S * J), T).reshape(S, J, T)
        out = np.zeros((S, J, J * T))
        for j in range(J):
            for r in range(J):
                rows = slot[:, j] == r
                out[rows, j, r * T:(r + 1) * T] = within[rows, r]
        return out
    raise TypeError(f"unknown spec {spec!r}")


def _pad(w, T):
    if w.shape[1] >= T:
        return w[:, :T] if w.shape[1] == T else w
    return np.pad(w, ((0, 0), (0, T - w.shape[1])))


def peppf_mc_from_weights(spec: MsspSpec, grouped: GroupedSample, num_samples: int,
                          rng: np.random.Generator, truncation: int = 500, batch: int = 1000) -> MCEstimate:
    """Estimate the pEPPF as ``E[sum_{h distinct} prod_{j,d} pi_{j,h_d}^{n_{j,d}}]``.

    Weight arrays are built from truncated stick-breaking (or finite
    Dirichlet) draws of the constituent families.
    """
    _check_J(spec, grouped.J)
    if truncation < grouped.D:
        raise ValueError(f"truncation {truncation} is below the number of species {grouped.D}")
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    exps = [tuple(int(x) for x in grouped.freq[:, d]) for d in range(grouped.D)]
    total, sq, done = 0.0, 0.0, 0
    while done < num_samples:
        b = min(batch, num_samples - done)
        w = _weight_array(spec, grouped.J, truncation, rng, b)
        logw = np.log(np.where(w > 0, w, 1.0))
        zero = w <= 0

        def power_sum(m):
            if sum(m) == 1:
                return np.ones(b)
            m = np.asarray(m, dtype=float)
            expo = np.einsum("sjh,j->sh", logw, m)
            dead = np.einsum("sjh,j->sh", zero.astype(float), (m > 0).astype(float)) > 0
            return np.where(dead, 0.0, np.exp(expo)).sum(axis=1)

        vals = distinct_index_sums(power_sum, exps) if exps else np.ones(b)
        total += vals.sum()
        sq += np.square(vals).sum()
        done += b
    mean = total / num_samples
    var = max(sq / num_samples - mean ** 2, 0.0)
    return MCEstimate(float(mean), math.sqrt(var / num_samples))


# --- predictive --------------------------------------------------------------


def add_observation(grouped: GroupedSample, j: int, species: int) -> GroupedSample:
    """Append one observation of ``species`` (``D`` for a new one) to group ``j``.

    Species are re-indexed by order of arrival by group.
    """
    labels = [list(g) for g in grouped.labels]
    labels[j].append(species if species < grouped.D else "new")
    return grouped_from_observations(labels)


def _closed_predictive(spec, grouped, latent, j):
    D = grouped.D
    freq = grouped.freq
    probs = np.zeros(D + 1)
    if isinstance(spec, Independent):
        own = [d for d in range(D) if freq[j, d]]
        w = seat_weights(spec.families[j], [int(freq[j, d]) for d in own])
        probs[own] = w[:-1]
        probs[D] = w[-1]
    elif isinstance(spec, Hierarchical):
        child = seat_weights(spec.children[j], latent.table_sizes(j))
        root = seat_weights(spec.root, latent.tables_per_dish(D))
        for t, d in enumerate(latent.dishes[j]):
            probs[d] += child[t]
        probs[:D] += child[-1] * np.array(root[:-1])
        probs[D] = child[-1] * root[-1]
    elif isinstance(spec, Nested):
        c = latent.clusters[j]
        labelled = [x for x in latent.clusters if x is not None]
        R = max(labelled) + 1 if labelled else 0
        if c is None:
            choice = seat_weights(spec.root, [labelled.count(r) for r in range(R)])
        else:
            choice = [0.0] * R + [0.0]
            choice[c] = 1.0
        for r in range(R):
            if choice[r] == 0:
                continue
            members = [i for i, x in enumerate(latent.clusters) if x == r]
            pooled = freq[members].sum(axis=0)
            own = [d for d in range(D) if pooled[d]]
            w = seat_weights(spec.within, [int(pooled[d]) for d in own])
            probs[own] += choice[r] * np.array(w[:-1])
            probs[D] += choice[r] * w[-1]
        probs[D] += choice[R]
    elif isinstance(spec, Additive):
        comp = _species_components(grouped, latent)
        e = spec.eps[j]
        shared = [d for d in range(D) if comp[d] == -1]
        idio = [d for d in range(D) if comp[d] == j]
        ws = seat_weights(spec.shared, [int(freq[:, d].sum()) for d in shared])
        wi = seat_weights(spec.idio[j], [int(freq[j, d]) for d in idio])
        probs[shared] = e * np.array(ws[:-1])
        probs[idio] = (1 - e) * np.array(wi[:-1])
        probs[D] = e * ws[-1] + (1 - e) * wi[-1]
    else:
        raise TypeError(f"unknown spec {spec!r}")
    return probs


def mgcrp_predictive(spec: MsspSpec, grouped: GroupedSample, j: int,
                     latent: AugmentedState | None = None) -> PredictiveWeights:
    """Law of the next observation of group ``j`` over existing species and a new one.

    With ``latent`` given, the conditional urn of the augmented
    representation is returned. Without it, the latent state is integrated
    out exactly against its posterior (requires ``n <= 10``).
    """
    _check_J(spec, grouped.J)
    if not 0 <= j < grouped.J:
        raise ValueError(f"group index {j} out of range")
    if latent is not None:
        check_latent(spec, grouped, latent)
        probs = _closed_predictive(spec, grouped, latent, j)
    elif isinstance(spec, Independent):
        if log_peppf(spec, grouped) == NEG_INF:
            raise ValueError("the sample has probability zero under this spec")
        probs = _closed_predictive(spec, grouped, NoLatent(), j)
    else:
        states = list(enumerate_latent(spec, grouped))
        logw = np.array([log_peppf_augmented(spec, grouped, z) for z in states])
        keep = np.isfinite(logw)
        if not keep.any():
            raise ValueError("the sample has probability zero under this spec")
        post = np.exp(logw[keep] - logsumexp(logw[keep]))
        probs = sum(p * _closed_predictive(spec, grouped, z, j)
                    for p, z in zip(post, itertools.compress(states, keep)))
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    return PredictiveWeights(probs[:-1], float(probs[-1]))


def mgcrp_predictive_from_ratios(spec: MsspSpec, grouped: GroupedSample, j: int, **kw) -> PredictiveWeights:
    """Same law as :func:`mgcrp_predictive`, as ratios of marginal pEPPFs."""
    base = log_peppf(spec, grouped, **kw)
    if base == NEG_INF:
        raise ValueError("the sample has probability zero under this spec")
    vals = np.array([math.exp(log_peppf(spec, add_observation(grouped, j, d), **kw) - base)
                     for d in range(grouped.D + 1)])
    vals /= vals.sum()
    return PredictiveWeights(vals[:-1], float(vals[-1]))


# --- marginals ---------------------------------------------------------------


def marginal_family(spec: MsspSpec, j: int, truncation: int = 1000) -> EppfFamily:
    """Univariate law of group ``j``.

    Closed form where one exists (independent, nested, additive with
    ``eps`` at 0 or 1); otherwise an :class:`EmpiricalWeights` backed by the
    group's weight sampler.
    """
    J = spec_groups(spec)
    if J is not None and not 0 <= j < J:
        raise ValueError(f"group index {j} out of range")
    if isinstance(spec, Independent):
        return spec.families[j]
    if isinstance(spec, Nested):
        return spec.within
    if isinstance(spec, Additive):
        if spec.eps[j] == 0:
            return spec.idio[j]
        if spec.eps[j] == 1:
            return spec.shared
    if isinstance(spec, (Additive, Hierarchical)):
        def sampler(size, rng, spec=spec, j=j):
            return _weight_array(spec, J, truncation, rng, size)[:, j, :]
        return EmpiricalWeights(sampler, truncation)
    raise TypeError(f"unknown spec {spec!r}")
