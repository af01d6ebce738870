"""Tie probabilities, correlations, moment identities and discovery curves.

The correlation between ``P_j(A)`` and ``P_k(A)`` does not depend on ``A``
and equals ``across / sqrt(within_j * within_k)``, where ``within_j`` is the
probability that two draws from group ``j`` coincide and ``across`` the
probability that one draw from each group coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .eppf import DM, DP, GN, PYP, MCEstimate, draw_index, tie_probability
from .multivariate import (
    Additive, Hierarchical, MsspSpec, Nested, log_peppf, simulate_labels, spec_groups,
)
from .partitions import GroupedSample


class UnsupportedModelError(ValueError):
    """Raised for named models without a rational closed form."""


@dataclass(frozen=True)
class TieProbabilities:
    """Tie probabilities for a pair of groups ``(j, k)``.

    Standard errors are zero for closed-form values.
    """

    within_j: float
    within_k: float
    across: float
    correlation: float
    method: str = "closed-form"
    samples: int | None = None
    stderr: dict = field(default_factory=lambda: {"within_j": 0.0, "within_k": 0.0, "across": 0.0,
                                                   "correlation": 0.0})


def _ties(within_j, within_k, across, **kw):
    if within_j <= 0 or within_k <= 0:
        raise ValueError("correlation is undefined when a within-group tie probability is zero")
    return TieProbabilities(within_j, within_k, across, across / math.sqrt(within_j * within_k), **kw)


# --- Monte Carlo -------------------------------------------------------------


def _groups(spec, j, k, J):
    fixed = spec_groups(spec)
    J = fixed if fixed is not None else (J if J is not None else max(j, k) + 1)
    if not (0 <= j < J and 0 <= k < J) or j == k:
        raise ValueError(f"need two distinct groups in [0, {J}), got {j} and {k}")
    return J


def tie_probabilities_mc(spec: MsspSpec | Callable, j: int, k: int, num_samples: int,
                         rng: np.random.Generator, J: int | None = None) -> TieProbabilities:
    """Estimate tie probabilities by forward simulation.

    Each replicate draws two observations in groups ``j`` and ``k``.
    ``spec`` may also be a callable ``sim(sizes, rng) -> labels`` for
    constructions simulated outside :mod:`msspy.multivariate`.
    Standard errors come from the indicator covariances (delta method for
    the correlation).
    """
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    if callable(spec):
        sim = spec
        J = J if J is not None else max(j, k) + 1
    else:
        J = _groups(spec, j, k, J)

        def sim(sizes, rng):
            return simulate_labels(spec, sizes, rng)[0]
    sizes = [0] * J
    sizes[j] = sizes[k] = 2
    ind = np.empty((num_samples, 3))
    for s in range(num_samples):
        lab = sim(sizes, rng)
        a, b = lab[j], lab[k]
        ind[s] = (a[0] == a[1], b[0] == b[1], a[0] == b[0])
    mean = ind.mean(axis=0)
    cov = np.cov(ind, rowvar=False, ddof=0) / num_samples if num_samples > 1 else np.zeros((3, 3))
    se = np.sqrt(np.diag(cov))
    wj, wk, ac = mean
    if wj > 0 and wk > 0:
        corr = ac / math.sqrt(wj * wk)
        grad = np.array([-corr / (2 * wj), -corr / (2 * wk), 1 / math.sqrt(wj * wk)])
        se_corr = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    else:
        corr, se_corr = math.nan, math.nan
    return TieProbabilities(float(wj), float(wk), float(ac), float(corr), method="monte-carlo",
                            samples=num_samples,
                            stderr={"within_j": float(se[0]), "within_k": float(se[1]),
                                    "across": float(se[2]), "correlation": se_corr})


def tie_probabilities_exact(spec: MsspSpec, j: int, k: int, J: int | None = None) -> TieProbabilities:
    """Tie probabilities from exact partially exchangeable partition probabilities."""
    J = _groups(spec, j, k, J)

    def prob(rows):
        return math.exp(log_peppf(spec, GroupedSample(tuple(rows))))

    def pair(g, h):
        rows = [()] * J
        if g == h:
            rows[g] = (0, 0)
        else:
            rows[g], rows[h] = (0,), (0,)
        return prob(rows)

    return _ties(pair(j, j), pair(k, k), pair(j, k))


# --- closed-form registry -----------------------------------------------------


def _pair(x):
    if np.ndim(x) == 0:
        return float(x), float(x)
    a, b = x
    return float(a), float(b)


def _additive_row(eps, shared_tie, idio_tie):
    ej, ek = _pair(eps)
    tj, tk = _pair(idio_tie)
    within_j = ej * ej * shared_tie + (1 - ej) ** 2 * tj
    within_k = ek * ek * shared_tie + (1 - ek) ** 2 * tk
    return within_j, within_k, ej * ek * shared_tie


def _hdp(alpha, alpha0):
    w = (1 + alpha + alpha0) / ((1 + alpha) * (1 + alpha0))
    return w, w, 1 / (1 + alpha0)


def _hpy(sigma, alpha, sigma0, alpha0):
    w = ((1 - sigma * sigma0) + alpha * (1 - sigma0) + alpha0 * (1 - sigma)) / ((1 + alpha) * (1 + alpha0))
    return w, w, (1 - sigma0) / (1 + alpha0)


def _hdm(M, tau, M0, tau0):
    w = 1 - tau * tau0 * (M - 1) * (M0 - 1) / ((1 + tau * M) * (1 + tau0 * M0))
    return w, w, (1 + tau0) / (1 + tau0 * M0)


def _hgn(gamma, gamma0):
    w = 2 * (gamma + gamma0) / ((gamma + 1) * (gamma0 + 1))
    return w, w, 2 * gamma0 / (gamma0 + 1)


def _hssp(child_tie, root_tie):
    w = child_tie + (1 - child_tie) * root_tie
    return w, w, root_tie


def _ndp(alpha, beta):
    return 1 / (1 + beta), 1 / (1 + beta), 1 / ((1 + alpha) * (1 + beta))


def _npy(sigma_alpha, alpha, sigma_beta, beta):
    w = (1 - sigma_beta) / (1 + beta)
    return w, w, (1 - sigma_alpha) / (1 + alpha) * w


def _ndm(M_alpha, tau_alpha, M_beta, tau_beta):
    w = (1 + tau_beta) / (1 + tau_beta * M_beta)
    return w, w, (1 + tau_alpha) / (1 + tau_alpha * M_alpha) * w


def _ngn(gamma_alpha, gamma_beta):
    w = 2 * gamma_beta / (gamma_beta + 1)
    return w, w, 2 * gamma_alpha / (gamma_alpha + 1) * w


def _nssp(root_tie, within_tie):
    return within_tie, within_tie, root_tie * within_tie


def _add_dp(eps, alpha0, alpha):
    aj, ak = _pair(alpha)
    return _additive_row(eps, 1 / (1 + alpha0), (1 / (1 + aj), 1 / (1 + ak)))


def _add_py(eps, sigma0, alpha0, sigma, alpha):
    sj, sk = _pair(sigma)
    aj, ak = _pair(alpha)
    return _additive_row(eps, (1 - sigma0) / (1 + alpha0), ((1 - sj) / (1 + aj), (1 - sk) / (1 + ak)))


def _add_dm(eps, M0, tau0, M, tau):
    Mj, Mk = _pair(M)
    tj, tk = _pair(tau)
    return _additive_row(eps, (1 + tau0) / (1 + tau0 * M0), ((1 + tj) / (1 + tj * Mj), (1 + tk) / (1 + tk * Mk)))


def _add_gn(eps, gamma0, gamma):
    gj, gk = _pair(gamma)
    return _additive_row(eps, 2 * gamma0 / (gamma0 + 1), (2 * gj / (gj + 1), 2 * gk / (gk + 1)))


def _add_ssp(eps, shared_tie, idio_tie):
    return _additive_row(eps, shared_tie, idio_tie)


def _hhdp(alpha, beta, beta0):
    w = (1 + beta + beta0) / ((1 + beta) * (1 + beta0))
    return w, w, 1 / (beta0 + 1) + beta0 / ((1 + alpha) * (1 + beta) * (1 + beta0))


def _ncam(alpha, beta):
    w = 1 / (1 + beta)
    return w, w, (1 / (1 + alpha)) * (1 / (1 + beta) + alpha / (2 * beta + 1))


REGISTRY: dict[str, Callable] = {
    "hdp": _hdp, "hpy": _hpy, "hdm": _hdm, "hgn": _hgn, "hssp": _hssp,
    "ndp": _ndp, "npy": _npy, "ndm": _ndm, "ngn": _ngn, "nssp": _nssp,
    "+dp": _add_dp, "+py": _add_py, "+dm": _add_dm, "+gn": _add_gn, "+ssp": _add_ssp,
    "hhdp": _hhdp, "ncam": _ncam,
}
UNSUPPORTED = {"gmdp", "gm-dp", "gmsigma", "gm-sigma", "gm-σ"}


def _normalize_name(model: str) -> str:
    name = model.strip().lower().replace("_", "-")
    if name.startswith("add-") or name.startswith("add"):
        name = "+" + name.removeprefix("add-").removeprefix("add")
    return name


def supported_models() -> list[str]:
    return sorted(REGISTRY)


def closed_form_registry(model: str, **params) -> TieProbabilities:
    """Closed-form tie probabilities and correlation of a named model.

    Parameters
    ----------
    model : str
        One of ``supported_models()`` (case-insensitive; ``add-dp`` is an
        alias of ``+dp``).
    **params
        Model parameters, for example ``alpha`` and ``alpha0`` for ``hdp``.
        Generic rows (``hssp``, ``nssp``, ``+ssp``) take tie probabilities
        of their constituent processes (``child_tie``, ``root_tie``,
        ``within_tie``, ``shared_tie``, ``idio_tie``). Additive rows accept
        ``eps`` and idiosyncratic parameters as scalars or ``(j, k)`` pairs.

    Raises
    ------
    UnsupportedModelError
        For rows without a rational closed form, or unknown names.
    """
    name = _normalize_name(model)
    if name in UNSUPPORTED or name.replace("-", "") in UNSUPPORTED:
        raise UnsupportedModelError(
            f"model {model!r} needs special-function constants and is not supported; "
            f"supported models: {', '.join(supported_models())}")
    if name not in REGISTRY:
        raise UnsupportedModelError(f"unknown model {model!r}; supported models: {', '.join(supported_models())}")
    try:
        wj, wk, ac = REGISTRY[name](**params)
    except TypeError as e:
        raise ValueError(f"bad parameters for {name}: {e}") from None
    return _ties(wj, wk, ac)


def named_spec(model: str, **params) -> MsspSpec:
    """Two-group construction behind a named registry row (sampled rows only)."""
    name = _normalize_name(model)
    p = params
    if name == "hdp":
        return Hierarchical((DP(p["alpha"]),) * 2, DP(p["alpha0"]))
    if name == "hpy":
        return Hierarchical((PYP(p["sigma"], p["alpha"]),) * 2, PYP(p["sigma0"], p["alpha0"]))
    if name == "hdm":
        return Hierarchical((DM(p["M"], p["tau"]),) * 2, DM(p["M0"], p["tau0"]))
    if name == "hgn":
        return Hierarchical((GN(p["gamma"]),) * 2, GN(p["gamma0"]))
    if name == "ndp":
        return Nested(DP(p["alpha"]), DP(p["beta"]))
    if name == "npy":
        return Nested(PYP(p["sigma_alpha"], p["alpha"]), PYP(p["sigma_beta"], p["beta"]))
    if name == "ndm":
        return Nested(DM(p["M_alpha"], p["tau_alpha"]), DM(p["M_beta"], p["tau_beta"]))
    if name == "ngn":
        return Nested(GN(p["gamma_alpha"]), GN(p["gamma_beta"]))
    eps = _pair(p.get("eps", 0.5))
    if name == "+dp":
        return Additive(eps, DP(p["alpha0"]), tuple(DP(a) for a in _pair(p["alpha"])))
    if name == "+py":
        return Additive(eps, PYP(p["sigma0"], p["alpha0"]),
                        tuple(PYP(s, a) for s, a in zip(_pair(p["sigma"]), _pair(p["alpha"]))))
    if name == "+dm":
        return Additive(eps, DM(p["M0"], p["tau0"]),
                        tuple(DM(int(m), t) for m, t in zip(_pair(p["M"]), _pair(p["tau"]))))
    if name == "+gn":
        return Additive(eps, GN(p["gamma0"]), tuple(GN(g) for g in _pair(p["gamma"])))
    raise UnsupportedModelError(f"no simulable construction for {model!r}")


# --- constructions outside the four spec types (simulation only) --------------


def ncam_simulator(alpha: float, beta: float):
    """Simulator of a common-atoms nested model with DP group clustering.

    Groups are clustered by a CRP(alpha); every cluster draws its own
    GEM(beta) weights over one common sequence of atoms.
    """

    def sim(sizes, rng):
        cluster_sizes: list[int] = []
        cluster_counts: list[list[int]] = []
        out = []
        for I in sizes:
            row = []
            if I:
                r = draw_index(cluster_sizes + [alpha], rng.random())
                if r == len(cluster_sizes):
                    cluster_sizes.append(0)
                    cluster_counts.append([])
                cluster_sizes[r] += 1
                counts = cluster_counts[r]
                for _ in range(I):
                    rest = sum(counts)
                    l = 0
                    while True:
                        nl = counts[l] if l < len(counts) else 0
                        if rng.random() < (1 + nl) / (1 + beta + rest):
                            break
                        rest -= nl
                        l += 1
                    while len(counts) <= l:
                        counts.append(0)
                    counts[l] += 1
                    row.append(l)
            out.append(tuple(row))
        return tuple(out)

    return sim


def hhdp_simulator(alpha: float, beta: float, beta0: float):
    """Simulator of a hidden hierarchical DP.

    Groups are clustered by a CRP(alpha); each cluster is a DP(beta) whose
    base is one shared DP(beta0) (franchise seating within clusters).
    """

    def sim(sizes, rng):
        cluster_sizes: list[int] = []
        cluster_tables: list[list[int]] = []
        cluster_dishes: list[list[int]] = []
        dish_tables: list[int] = []
        out = []
        for I in sizes:
            row = []
            if I:
                r = draw_index(cluster_sizes + [alpha], rng.random())
                if r == len(cluster_sizes):
                    cluster_sizes.append(0)
                    cluster_tables.append([])
                    cluster_dishes.append([])
                cluster_sizes[r] += 1
                tables, dishes = cluster_tables[r], cluster_dishes[r]
                for _ in range(I):
                    t = draw_index(tables + [beta], rng.random())
                    if t == len(tables):
                        d = draw_index(dish_tables + [beta0], rng.random())
                        if d == len(dish_tables):
                            dish_tables.append(0)
                        dish_tables[d] += 1
                        tables.append(0)
                        dishes.append(d)
                    tables[t] += 1
                    row.append(dishes[t])
            out.append(tuple(row))
        return tuple(out)

    return sim


def named_simulator(model: str, **params):
    """Forward simulator ``sim(sizes, rng) -> labels`` of a named model."""
    name = _normalize_name(model)
    if name == "ncam":
        return ncam_simulator(params["alpha"], params["beta"])
    if name == "hhdp":
        return hhdp_simulator(params["alpha"], params["beta"], params["beta0"])
    spec = named_spec(name, **params)
    return lambda sizes, rng: simulate_labels(spec, sizes, rng)[0]


# --- correlation ---------------------------------------------------------------


def correlation(spec: MsspSpec | str, j: int = 0, k: int = 1, method: str = "closed-form",
                num_samples: int = 100_000, rng: np.random.Generator | None = None,
                J: int | None = None, **params) -> float:
    """Correlation between ``P_j(A)`` and ``P_k(A)``.

    ``spec`` is either a construction or a registry model name (with its
    parameters as keywords). ``method`` is ``"closed-form"`` or
    ``"monte-carlo"``.
    """
    if method == "closed-form":
        if isinstance(spec, str):
            return closed_form_registry(spec, **params).correlation
        return tie_probabilities_exact(spec, j, k, J).correlation
    if method == "monte-carlo":
        if rng is None:
            raise ValueError("Monte Carlo correlation needs an rng")
        target = named_simulator(spec, **params) if isinstance(spec, str) else spec
        t = tie_probabilities_mc(target, j, k, num_samples, rng, J=J)
        if not t.within_j > 0 or not t.within_k > 0:
            raise ValueError("correlation is undefined when a within-group tie probability is zero")
        return t.correlation
    raise ValueError(f"unknown method {method!r}")


def extreme_trend_check(model: str, parameter: str, values: Sequence[float], target: float,
                        **fixed) -> np.ndarray:
    """Correlations of a registry model along a parameter path.

    Checks that the sequence moves strictly monotonically towards
    ``target`` (0 or 1) and returns it; raises ``AssertionError`` otherwise.

    >>> extreme_trend_check("hdp", "alpha0", [1, 10, 100], 0.0, alpha=1.0).round(3)
    array([0.667, 0.167, 0.02 ])
    """
    corr = np.array([closed_form_registry(model, **{**fixed, parameter: v}).correlation for v in values])
    gaps = np.abs(corr - target)
    if len(corr) > 1 and not np.all(np.diff(gaps) < 0):
        raise AssertionError(f"{model} correlation along {parameter}={list(values)} does not approach "
                             f"{target} monotonically: {corr.tolist()}")
    return corr


# --- moments ---------------------------------------------------------------------


def _mc(values) -> MCEstimate:
    values = np.asarray(values, dtype=float)
    n = len(values)
    se = float(values.std() / math.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(values.mean()), se)


def _sizes_for(spec, q_vector):
    q = [int(x) for x in q_vector]
    if any(x < 0 for x in q) or not any(q):
        raise ValueError("q must be non-negative and not all zero")
    fixed = spec_groups(spec)
    if fixed is not None:
        if len(q) > fixed:
            raise ValueError(f"q has {len(q)} entries but the construction has {fixed} groups")
        q = q + [0] * (fixed - len(q))
    return q


def marginal_moment(spec: MsspSpec, j: int, p0A: float, q: int, num_samples: int,
                    rng: np.random.Generator, J: int | None = None) -> MCEstimate:
    """Estimate ``E[P_j(A)^q]`` as ``E[p0A^K]`` with ``K`` the species among ``q`` draws of group ``j``."""
    if q < 1:
        raise ValueError("q must be at least 1")
    fixed = spec_groups(spec)
    J = fixed if fixed is not None else (J if J is not None else j + 1)
    q_vector = [0] * J
    q_vector[j] = q
    return mixed_moment(spec, q_vector, p0A, num_samples, rng)


def mixed_moment(spec: MsspSpec, q_vector: Sequence[int], p0A: float, num_samples: int,
                 rng: np.random.Generator) -> MCEstimate:
    """Estimate ``E[prod_j P_j(A)^{q_j}]`` as ``E[p0A^K]`` with ``K`` the
    total number of species in the pooled sample."""
    if not 0 <= p0A <= 1:
        raise ValueError("p0A must lie in [0, 1]")
    sizes = _sizes_for(spec, q_vector)
    vals = np.empty(num_samples)
    for s in range(num_samples):
        lab = simulate_labels(spec, sizes, rng)[0]
        K = len({d for row in lab for d in row})
        vals[s] = p0A ** K
    return _mc(vals)


def disjoint_joint_moment(spec: MsspSpec, q_vector: Sequence[int], masses: Sequence[float],
                          num_samples: int, rng: np.random.Generator) -> MCEstimate:
    """Estimate ``E[prod_j P_j(A_j)^{q_j}]`` for disjoint sets ``A_j``.

    Each replicate contributes ``prod_j p0(A_j)^{K_j}`` when no species is
    shared across groups, and zero otherwise. ``masses[j]`` is ``p0(A_j)``;
    disjointness requires the masses to sum to at most one.
    """
    sizes = _sizes_for(spec, q_vector)
    m = [float(x) for x in masses]
    if len(m) < len(q_vector) or any(x < 0 for x in m):
        raise ValueError("need one non-negative mass per group")
    if sum(m[j] for j, qj in enumerate(q_vector) if qj) > 1 + 1e-12:
        raise ValueError("masses of disjoint sets must sum to at most 1")
    vals = np.empty(num_samples)
    for s in range(num_samples):
        lab = simulate_labels(spec, sizes, rng)[0]
        seen: set = set()
        v = 1.0
        for j, row in enumerate(lab):
            if not row:
                continue
            species = set(row)
            if species & seen:
                v = 0.0
                break
            seen |= species
            v *= m[j] ** len(species)
        vals[s] = v
    return _mc(vals)


def discovery_curve(spec: MsspSpec, j: int, k: int, n_max: int, num_samples: int,
                    rng: np.random.Generator, J: int | None = None) -> np.ndarray:
    """Probability that the first draw of group ``j`` is absent from the first
    ``n`` draws of group ``k``, for ``n = 1..n_max``.

    Returns an array with columns ``(n, estimate, stderr)``; one replicate of
    ``n_max`` draws yields the whole curve.
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    if n_max == 0:
        return np.zeros((0, 3))
    J = _groups(spec, j, k, J)
    sizes = [0] * J
    sizes[j], sizes[k] = 1, n_max
    first_hit = np.full(num_samples, n_max + 1)
    for s in range(num_samples):
        lab = simulate_labels(spec, sizes, rng)[0]
        x = lab[j][0]
        for i, y in enumerate(lab[k]):
            if y == x:
                first_hit[s] = i + 1
                break
    n = np.arange(1, n_max + 1)
    p = (first_hit[None, :] > n[:, None]).mean(axis=1)
    se = np.sqrt(p * (1 - p) / num_samples)
    return np.column_stack([n, p, se])


def family_tie(family) -> float:
    """Within-process tie probability of a univariate family."""
    return tie_probability(family)
