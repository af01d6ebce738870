"""Univariate species sampling: EPPFs, predictive rules and weight oracles.

All partition masses are evaluated in log-space. Compositions are given as
block sizes in any order; every EPPF here is symmetric in its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np
from scipy.special import gammaln

from .partitions import SetPartition, enumerate_partitions

NEG_INF = -math.inf


class NoClosedForm(ValueError):
    """Raised when a family has no closed-form EPPF or predictive rule."""


@dataclass(frozen=True)
class DP:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"DP requires alpha > 0, got {self.alpha}")


@dataclass(frozen=True)
class PYP:
    sigma: float
    alpha: float

    def __post_init__(self):
        if not 0 <= self.sigma < 1:
            raise ValueError(f"PYP requires sigma in [0, 1), got {self.sigma}")
        if not self.alpha > -self.sigma:
            raise ValueError(f"PYP requires alpha > -sigma, got alpha={self.alpha}")


@dataclass(frozen=True)
class DM:
    """Symmetric Dirichlet-multinomial on ``M`` species."""

    M: int
    tau: float

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"DM requires a positive integer M, got {self.M}")
        if not self.tau > 0:
            raise ValueError(f"DM requires tau > 0, got {self.tau}")


@dataclass(frozen=True)
class GN:
    """Gnedin process."""

    gamma: float

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"GN requires gamma in (0, 1), got {self.gamma}")


@dataclass(frozen=True)
class EmpiricalWeights:
    """A species sampling law given only through a weight sampler.

    ``sampler(size, rng)`` returns an array of shape ``(size, truncation)``
    of non-negative weights, one truncated weight sequence per row.
    """

    sampler: Callable[[int, np.random.Generator], np.ndarray]
    truncation: int = 1000


EppfFamily = Union[DP, PYP, DM, GN, EmpiricalWeights]


@dataclass(frozen=True)
class PredictiveWeights:
    """Probability of joining each existing block, and of opening a new one."""

    existing: np.ndarray
    new: float

    def __post_init__(self):
        total = float(np.sum(self.existing)) + self.new
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"predictive weights sum to {total!r}")

    @property
    def probabilities(self) -> np.ndarray:
        return np.append(self.existing, self.new)


class MCEstimate(NamedTuple):
    value: float
    stderr: float


def _check_sizes(sizes) -> tuple[int, ...]:
    out = tuple(int(s) for s in sizes)
    if any(s < 1 for s in out) or any(s != t for s, t in zip(out, sizes)):
        raise ValueError(f"invalid composition {tuple(sizes)}: block sizes must be positive integers")
    return out


# --- log EPPF ---------------------------------------------------------------


def log_eppf(family: EppfFamily, sizes: Sequence[int]) -> float:
    """Log-probability of a given partition with block sizes ``sizes``.

    Returns ``-inf`` when the partition is impossible (a Dirichlet-multinomial
    with more blocks than species).
    """
    sizes = _check_sizes(sizes)
    if not sizes:
        return 0.0
    if isinstance(family, DP):
        return _log_eppf_dp(family.alpha, sizes)
    if isinstance(family, PYP):
        if family.sigma == 0:
            return _log_eppf_dp(family.alpha, sizes)
        return _log_eppf_pyp(family.sigma, family.alpha, sizes)
    if isinstance(family, DM):
        return _log_eppf_dm(family.M, family.tau, sizes)
    if isinstance(family, GN):
        return log_eppf_sequential(family, sizes)
    if isinstance(family, EmpiricalWeights):
        raise NoClosedForm("weight-defined families have no closed-form EPPF; use eppf_mc_from_weights")
    raise TypeError(f"unknown family {family!r}")


def _log_eppf_dp(alpha, sizes):
    n, K = sum(sizes), len(sizes)
    return (K * math.log(alpha) + math.lgamma(alpha) - math.lgamma(alpha + n)
            + sum(math.lgamma(s) for s in sizes))


def _log_eppf_pyp(sigma, alpha, sizes):
    n, K = sum(sizes), len(sizes)
    out = sum(math.log(alpha + k * sigma) for k in range(1, K))
    out -= math.lgamma(alpha + n) - math.lgamma(alpha + 1)
    out += sum(math.lgamma(s - sigma) for s in sizes) - K * math.lgamma(1 - sigma)
    return out


def _log_eppf_dm(M, tau, sizes):
    n, K = sum(sizes), len(sizes)
    if K > M:
        return NEG_INF
    return (math.lgamma(M + 1) - math.lgamma(M - K + 1) + math.lgamma(tau * M)
            - math.lgamma(n + tau * M) - K * math.lgamma(tau)
            + sum(math.lgamma(s + tau) for s in sizes))


def log_eppf_sequential(family: EppfFamily, sizes: Sequence[int], order: Sequence[int] | None = None) -> float:
    """Log-EPPF as a product of predictive probabilities along an arrival order.

    ``order`` lists, for each arriving item, the index of its block in
    ``sizes``; blocks must be opened in increasing index. By default the
    blocks are filled one after another.
    """
    sizes = _check_sizes(sizes)
    if order is None:
        order = [k for k, s in enumerate(sizes) for _ in range(s)]
    counts: list[int] = []
    total = 0.0
    for k in order:
        if k == len(counts):
            p = _new_weight(family, counts)
            counts.append(1)
        elif k < len(counts):
            p = _existing_weight(family, counts, k)
            counts[k] += 1
        else:
            raise ValueError("arrival order opens blocks out of sequence")
        if p <= 0:
            return NEG_INF
        total += math.log(p)
    if tuple(counts) != sizes:
        raise ValueError("arrival order does not match the composition")
    return total


# --- predictive rules -------------------------------------------------------


def _existing_weight(family, counts, k):
    n, K = sum(counts), len(counts)
    nk = counts[k]
    if isinstance(family, DP):
        return nk / (family.alpha + n)
    if isinstance(family, PYP):
        return (nk - family.sigma) / (family.alpha + n)
    if isinstance(family, DM):
        return (nk + family.tau) / (family.tau * family.M + n)
    if isinstance(family, GN):
        return (nk + 1) * (n - K + family.gamma) / (n * (n + family.gamma))
    raise NoClosedForm(f"no closed-form predictive for {family!r}")


def _new_weight(family, counts):
    n, K = sum(counts), len(counts)
    if n == 0:
        return 1.0
    if isinstance(family, DP):
        return family.alpha / (family.alpha + n)
    if isinstance(family, PYP):
        return (family.alpha + family.sigma * K) / (family.alpha + n)
    if isinstance(family, DM):
        return family.tau * max(family.M - K, 0) / (family.tau * family.M + n)
    if isinstance(family, GN):
        return (K * K - K * family.gamma) / (n * (n + family.gamma))
    raise NoClosedForm(f"no closed-form predictive for {family!r}")


def seat_weights(family: EppfFamily, counts: Sequence[int]) -> list[float]:
    """Unvalidated closed-form predictive as a plain list ``[existing..., new]``."""
    out = [_existing_weight(family, counts, k) for k in range(len(counts))]
    out.append(_new_weight(family, counts))
    return out


def predictive(family: EppfFamily, sizes: Sequence[int]) -> PredictiveWeights:
    """Closed-form generalized Chinese restaurant process step.

    >>> predictive(PYP(0.5, 1.0), [2]).new
    0.5
    """
    sizes = list(_check_sizes(sizes))
    if isinstance(family, DM) and len(sizes) > family.M:
        raise ValueError("composition has more blocks than the DM support")
    w = seat_weights(family, sizes)
    return PredictiveWeights(np.array(w[:-1], dtype=float), float(w[-1]))


def predictive_from_ratios(family: EppfFamily, sizes: Sequence[int]) -> PredictiveWeights:
    """Predictive weights as ratios of EPPFs at sizes ``n + 1`` and ``n``."""
    sizes = list(_check_sizes(sizes))
    if not sizes:
        return PredictiveWeights(np.zeros(0), 1.0)
    base = log_eppf(family, sizes)
    existing = []
    for k in range(len(sizes)):
        bumped = sizes.copy()
        bumped[k] += 1
        existing.append(math.exp(log_eppf(family, bumped) - base))
    new = math.exp(log_eppf(family, sizes + [1]) - base)
    # ratios carry rounding error of order 1e-15; renormalize for the invariant
    total = sum(existing) + new
    return PredictiveWeights(np.array(existing) / total, new / total)


def sample_partition(family: EppfFamily, n: int, rng: np.random.Generator) -> SetPartition:
    """Draw a partition of ``[n]`` by sequential predictive seating."""
    if n < 1:
        raise ValueError("n must be at least 1")
    counts: list[int] = []
    labels = []
    for _ in range(n):
        k = draw_index(seat_weights(family, counts), rng.random())
        if k == len(counts):
            counts.append(0)
        counts[k] += 1
        labels.append(k + 1)
    return SetPartition(tuple(labels))


def draw_index(weights: Sequence[float], u: float) -> int:
    """Inverse-CDF draw from unnormalized non-negative weights."""
    total = sum(weights)
    target = u * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if target < acc:
            return i
    # u*total == total up to rounding: fall back to the last positive weight
    for i in range(len(weights) - 1, -1, -1):
        if weights[i] > 0:
            return i
    raise ValueError("all weights are zero")


def tie_probability(family: EppfFamily) -> float:
    """Probability that two draws coincide, ``EPPF(2)``."""
    return math.exp(log_eppf(family, [2]))


# --- weights ----------------------------------------------------------------


def stick_breaking_weights(sigma: float, alpha: float, truncation: int, rng: np.random.Generator,
                           size: int | None = None):
    """Truncated two-parameter GEM weights.

    Returns ``(weights, residual)``. With ``size`` given, ``weights`` has
    shape ``(size, truncation)`` and ``residual`` shape ``(size,)``.
    """
    PYP(sigma, alpha)  # domain check
    if truncation < 1:
        raise ValueError("truncation must be at least 1")
    i = np.arange(1, truncation + 1)
    shape = (truncation,) if size is None else (size, truncation)
    v = rng.beta(1 - sigma, alpha + i * sigma, size=shape)
    log_rest = np.cumsum(np.log1p(-v), axis=-1)
    prev = np.concatenate([np.zeros(shape[:-1] + (1,)), log_rest[..., :-1]], axis=-1)
    weights = v * np.exp(prev)
    return weights, np.exp(log_rest[..., -1])


def gem_weights(sigma: float, alpha: float, truncation: int = 1000) -> EmpiricalWeights:
    def sampler(size, rng):
        return stick_breaking_weights(sigma, alpha, truncation, rng, size=size)[0]
    return EmpiricalWeights(sampler, truncation)


def _sample_gnedin_M(gamma, size, rng):
    # P(M > m) = (1 - gamma)_m / m!, decreasing like m^{-gamma}
    log_u = np.log(rng.random(size))
    lo = np.zeros(size)
    hi = np.full(size, 1e15)

    def log_surv(m):
        return gammaln(m + 1 - gamma) - math.lgamma(1 - gamma) - gammaln(m + 1)

    # smallest integer m >= 1 with log P(M > m) <= log u
    for _ in range(60):
        mid = np.floor((lo + hi) / 2)
        ok = log_surv(mid) <= log_u
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        if np.all(hi - lo <= 1):
            break
    return np.maximum(hi, 1)


def family_weights(family: EppfFamily, truncation: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """Weight sequences of a family, shape ``(size, truncation)``.

    DP and PYP use stick-breaking; DM uses its Dirichlet weights (the
    truncation is raised to ``M``); GN draws the number of species and then
    uniform Dirichlet weights, folding any mass beyond the truncation into
    the residual.
    """
    if isinstance(family, DP):
        return stick_breaking_weights(0.0, family.alpha, truncation, rng, size)[0]
    if isinstance(family, PYP):
        return stick_breaking_weights(family.sigma, family.alpha, truncation, rng, size)[0]
    if isinstance(family, DM):
        g = rng.gamma(family.tau, size=(size, family.M))
        return g / g.sum(axis=1, keepdims=True)
    if isinstance(family, GN):
        M = _sample_gnedin_M(family.gamma, size, rng)
        e = rng.exponential(size=(size, truncation))
        e[np.arange(truncation)[None, :] >= M[:, None]] = 0.0
        tail = rng.gamma(np.maximum(M - truncation, 0) + 1e-300)
        tail[M <= truncation] = 0.0
        return e / (e.sum(axis=1) + tail)[:, None]
    if isinstance(family, EmpiricalWeights):
        return family.sampler(size, rng)
    raise TypeError(f"unknown family {family!r}")


def mobius_terms(D: int) -> list[tuple[float, list[list[int]]]]:
    """Coefficients of sums over distinct indices via the partition lattice.

    ``sum_{h_1 != ... != h_D} prod_d f_d(h_d)
    = sum_sigma mu(sigma) prod_{B in sigma} sum_h prod_{d in B} f_d(h)``
    with ``mu(sigma) = prod_B (-1)^(|B|-1) (|B|-1)!``.
    """
    if D == 0:
        return [(1.0, [])]
    out = []
    for p in enumerate_partitions(D):
        mu = 1.0
        for b in p.block_sizes:
            mu *= (-1) ** (b - 1) * math.factorial(b - 1)
        out.append((mu, p.blocks()))
    return out


def distinct_index_sums(power_sum: Callable[[tuple[int, ...]], np.ndarray], sizes: Sequence[Sequence[int]]) -> np.ndarray:
    """Evaluate ``sum_{h distinct} prod_d prod_j pi_{j,h_d}^{n_{j,d}}`` per sample.

    ``sizes[d]`` is the exponent vector of species ``d`` (one entry per
    group) and ``power_sum(m)`` returns ``sum_h prod_j pi_{j,h}^{m_j}`` for
    every sample.
    """
    D = len(sizes)
    cache: dict = {}
    total = None
    for mu, blocks in mobius_terms(D):
        term = mu
        for block in blocks:
            m = tuple(int(x) for x in np.sum([sizes[d] for d in block], axis=0))
            if m not in cache:
                cache[m] = power_sum(m)
            term = term * cache[m]
        total = term if total is None else total + term
    return total


def eppf_mc_many(weight_sampler: EppfFamily, compositions: Sequence[Sequence[int]], num_samples: int,
                 rng: np.random.Generator, batch: int = 2000) -> list[MCEstimate]:
    """Weight-based Monte Carlo EPPF for several compositions from shared draws."""
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    comps = [_check_sizes(c) for c in compositions]
    truncation = getattr(weight_sampler, "truncation", 1000)
    for c in comps:
        if len(c) > truncation and not isinstance(weight_sampler, DM):
            raise ValueError(f"truncation {truncation} is below the number of blocks {len(c)}")
        if isinstance(weight_sampler, DM) and len(c) > weight_sampler.M:
            raise ValueError("DM support is smaller than the number of blocks")
    sums = np.zeros(len(comps))
    sq = np.zeros(len(comps))
    done = 0
    while done < num_samples:
        b = min(batch, num_samples - done)
        w = family_weights(weight_sampler, truncation, rng, b)
        powers: dict = {}

        def power_sum(m, w=w, powers=powers):
            if m not in powers:
                # first powers sum to the total mass, 1, whatever the truncation
                powers[m] = np.ones(len(w)) if m[0] == 1 else np.sum(w ** m[0], axis=1)
            return powers[m]

        for i, c in enumerate(comps):
            vals = distinct_index_sums(power_sum, [(s,) for s in c])
            sums[i] += vals.sum()
            sq[i] += np.square(vals).sum()
        done += b
    mean = sums / num_samples
    var = np.maximum(sq / num_samples - mean ** 2, 0.0)
    return [MCEstimate(float(m), float(math.sqrt(v / num_samples))) for m, v in zip(mean, var)]


def eppf_mc_from_weights(weight_sampler: EppfFamily, sizes: Sequence[int], num_samples: int,
                         rng: np.random.Generator) -> MCEstimate:
    """Estimate an EPPF as ``E[sum_{h distinct} prod_k pi_{h_k}^{n_k}]``.

    ``weight_sampler`` is an :class:`EmpiricalWeights` or any family with a
    weight representation (DP and PYP through truncated stick-breaking).
    """
    return eppf_mc_many(weight_sampler, [sizes], num_samples, rng)[0]


def total_mass_check(family: EppfFamily, n: int) -> float:
    """Sum of the EPPF over all set partitions of ``[n]`` (should be 1)."""
    total = 0.0
    for p in enumerate_partitions(n):
        lp = log_eppf(family, p.block_sizes)
        if lp > NEG_INF:
            total += math.exp(lp)
    return total


def family_from_dict(d: dict) -> EppfFamily:
    """Build a family from ``{"family": "pyp", "sigma": .., "alpha": ..}``."""
    name = str(d.get("family", "")).lower()
    try:
        if name == "dp":
            return DP(float(d["alpha"]))
        if name in ("pyp", "py"):
            return PYP(float(d.get("sigma", 0.0)), float(d["alpha"]))
        if name == "dm":
            return DM(int(d["M"]), float(d["tau"]))
        if name == "gn":
            return GN(float(d["gamma"]))
    except KeyError as e:
        raise ValueError(f"family {name!r} is missing parameter {e.args[0]!r}") from None
    raise ValueError(f"unknown family {name!r}; expected one of dp, pyp, dm, gn")


def family_to_dict(family: EppfFamily) -> dict:
    if isinstance(family, DP):
        return {"family": "dp", "alpha": family.alpha}
    if isinstance(family, PYP):
        return {"family": "pyp", "sigma": family.sigma, "alpha": family.alpha}
    if isinstance(family, DM):
        return {"family": "dm", "M": family.M, "tau": family.tau}
    if isinstance(family, GN):
        return {"family": "gn", "gamma": family.gamma}
    raise NoClosedForm(f"{family!r} cannot be serialized")
