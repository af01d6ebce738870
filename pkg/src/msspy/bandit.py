"""Sequential species discovery as a multi-armed bandit.

Each arm is a population of species. After an initial sample from every
arm, a strategy repeatedly picks the arm with the highest (estimated)
probability that the next draw is a species not yet seen in any arm.

Draws use common random numbers: in each replicate, arm ``j`` has a fixed
deck of draws and the ``m``-th pull of arm ``j`` returns the ``m``-th card
whatever the strategy. Strategies therefore differ only through their
choices, which sharpens paired comparisons.
"""

from __future__ import annotations

import csv
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .inference import MODELS, StrategyModel, run_chain

STRATEGIES = ("uniform", "oracle") + MODELS
PREFIXES = ("BCI", "P", "S", "C")
ALIASES = {
    "indepdp": "IndepDP", "dp": "IndepDP", "indeppy": "IndepPY", "py": "IndepPY",
    "adddp": "AddDP", "+dp": "AddDP", "addpy": "AddPY", "+py": "AddPY",
    "hierdp": "HierDP", "hdp": "HierDP", "hierpy": "HierPY", "hpy": "HierPY",
    "uniform": "uniform", "oracle": "oracle",
}


def canonical_strategy(name: str) -> str:
    key = name.strip().lower()
    if key not in ALIASES:
        raise ValueError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
    return ALIASES[key]


@dataclass(frozen=True)
class ArmPopulation:
    """Species law of one arm over a global species index.

    Exactly one of ``counts`` (a finite population, drawn without
    replacement) or ``probs`` (drawn i.i.d.) is set.
    """

    name: str
    counts: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if (self.counts is None) == (self.probs is None):
            raise ValueError("set exactly one of counts and probs")
        if self.counts is not None and np.any(np.asarray(self.counts) < 0):
            raise ValueError("counts must be non-negative")
        if self.probs is not None:
            p = np.asarray(self.probs)
            if np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
                raise ValueError("probs must be a probability vector")

    @property
    def num_species(self) -> int:
        return len(self.counts if self.counts is not None else self.probs)

    @property
    def size(self) -> int | None:
        return int(np.sum(self.counts)) if self.counts is not None else None

    @property
    def truth(self) -> np.ndarray:
        if self.probs is not None:
            return np.asarray(self.probs)
        c = np.asarray(self.counts, dtype=float)
        return c / c.sum()


@dataclass(frozen=True)
class BanditConfig:
    init_per_arm: int = 30
    steps: int = 300
    replicates: int = 20
    mcmc_iters_per_step: int = 200
    seed: int = 0
    mode: str = "without-replacement"

    def __post_init__(self):
        if self.mode not in ("without-replacement", "iid"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.init_per_arm < 0 or self.steps < 0 or self.replicates < 1 or self.mcmc_iters_per_step < 1:
            raise ValueError("invalid bandit configuration")


@dataclass
class Trajectory:
    """Record of one replicate. Row ``i`` of the step arrays is step ``i``."""

    strategy: str
    arms: np.ndarray
    species: np.ndarray
    was_new: np.ndarray
    estimates: np.ndarray | None
    true_discovery: np.ndarray
    available: np.ndarray
    initially_seen: int
    seen: int
    stopped_early: bool = False

    @property
    def steps(self) -> int:
        return len(self.arms)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.was_new)

    def rows(self):
        """``(step, arm, species_id, was_new, est_prob_arm_1..J)`` rows."""
        J = self.true_discovery.shape[1]
        for i in range(self.steps):
            est = self.estimates[i] if self.estimates is not None else [math.nan] * J
            yield [i + 1, int(self.arms[i]) + 1, int(self.species[i]), int(self.was_new[i]), *est]


# --- data ------------------------------------------------------------------


def load_tree_csv(path: str | Path) -> list[ArmPopulation]:
    """Read a species-by-plot count table and pool plots into four arms.

    The header holds plot codes (optionally preceded by a species-name
    column); each further row holds one species' non-negative integer counts.
    Plots are pooled by code prefix ``BCI``, ``P``, ``S`` and ``C``; other
    columns are ignored with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file {path} does not exist")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one species row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]

    def numeric(x):
        try:
            float(x)
            return True
        except ValueError:
            return False

    # a leading species-name column is recognized by non-numeric entries
    start = 0 if _prefix(header[0]) and all(numeric(r[0]) for r in body) else 1
    groups: dict[str, list[int]] = {p: [] for p in PREFIXES}
    ignored = []
    for col in range(start, len(header)):
        p = _prefix(header[col])
        if p is None:
            ignored.append(header[col])
        else:
            groups[p].append(col)
    if ignored:
        warnings.warn(f"ignoring columns with unknown plot prefixes: {ignored}", stacklevel=2)
    counts = np.zeros((len(body), len(PREFIXES)), dtype=np.int64)
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
        for a, p in enumerate(PREFIXES):
            for col in groups[p]:
                txt = r[col].strip() or "0"
                try:
                    v = float(txt)
                except ValueError:
                    raise ValueError(f"{path}: row {i + 2}, column {header[col]!r}: not a number: {txt!r}") from None
                if v < 0 or v != int(v):
                    raise ValueError(f"{path}: row {i + 2}, column {header[col]!r}: counts must be "
                                     f"non-negative integers")
                counts[i, a] += int(v)
    keep = counts.sum(axis=1) > 0
    counts = counts[keep]
    return [ArmPopulation(p, counts=counts[:, a]) for a, p in enumerate(PREFIXES)]


def _prefix(code: str) -> str | None:
    code = code.strip()
    for p in PREFIXES:
        if code.upper().startswith(p):
            return p
    return None


def generate_zipf_arms(total_species: int = 3000, support_per_arm: int = 2500,
                       exponents: Sequence[float] = (1.3,) * 4 + (2.0,) * 4,
                       rng: np.random.Generator | None = None) -> list[ArmPopulation]:
    """Synthetic arms with Zipf laws over random overlapping supports.

    Arm ``j`` takes a uniformly random subset of ``support_per_arm`` species
    in random order and gives its ``k``-th species mass proportional to
    ``k ** -exponents[j]``.
    """
    if support_per_arm > total_species or support_per_arm < 1:
        raise ValueError("support_per_arm must lie in [1, total_species]")
    if rng is None:
        raise ValueError("generate_zipf_arms needs an rng")
    k = np.arange(1, support_per_arm + 1, dtype=float)
    arms = []
    for j, s in enumerate(exponents):
        support = rng.permutation(total_species)[:support_per_arm]
        w = k ** -float(s)
        p = np.zeros(total_species)
        p[support] = w / w.sum()
        arms.append(ArmPopulation(f"arm{j + 1}", probs=p))
    return arms


# --- simulation ----------------------------------------------------------------


def _decks(populations, config, rng):
    n = config.init_per_arm + config.steps
    decks = []
    for pop in populations:
        if config.mode == "iid":
            if pop.probs is None:
                raise ValueError("iid mode needs probability-vector arms")
            decks.append(rng.choice(pop.num_species, size=n, p=pop.truth))
        else:
            if pop.counts is None:
                raise ValueError("without-replacement mode needs finite count arms")
            individuals = np.repeat(np.arange(pop.num_species), np.asarray(pop.counts))
            decks.append(rng.permutation(individuals))
    return decks


def _stream_seed(config, replicate, label):
    return np.random.SeedSequence([config.seed, replicate, zlib.crc32(label.encode())])


def run_bandit(config: BanditConfig, populations: Sequence[ArmPopulation], strategy: str,
               replicate: int = 0) -> Trajectory:
    """Run one replicate of a strategy.

    The draw decks depend only on ``(config.seed, replicate)``; tie-breaking
    and MCMC randomness come from a separate stream per strategy.
    """
    strategy = canonical_strategy(strategy)
    J = len(populations)
    deck_rng = np.random.default_rng(_stream_seed(config, replicate, "decks"))
    rng = np.random.default_rng(_stream_seed(config, replicate, strategy))
    decks = _decks(populations, config, deck_rng)
    pulls = np.zeros(J, dtype=np.int64)
    S = populations[0].num_species
    col = np.full(S, -1, dtype=np.int64)  # global species -> data column, by first sighting
    counts = np.zeros((J, 0), dtype=np.int64)
    remaining = None
    if config.mode == "without-replacement":
        remaining = np.array([np.asarray(p.counts, dtype=np.int64) for p in populations])
    truth = np.array([p.truth for p in populations]) if remaining is None else None

    def draw(j):
        nonlocal counts
        if pulls[j] >= len(decks[j]):
            raise RuntimeError("deck exhausted")
        sp = int(decks[j][pulls[j]])
        pulls[j] += 1
        if remaining is not None:
            remaining[j, sp] -= 1
        new = col[sp] < 0
        if new:
            col[sp] = counts.shape[1]
            counts = np.concatenate([counts, np.zeros((J, 1), dtype=np.int64)], axis=1)
        counts[j, col[sp]] += 1
        return sp, new

    for j in range(J):
        for _ in range(min(config.init_per_arm, len(decks[j]))):
            draw(j)
    initially_seen = counts.shape[1]

    def available():
        if remaining is None:
            return np.ones(J, dtype=bool)
        return remaining.sum(axis=1) > 0

    def true_discovery():
        unseen = col < 0
        if remaining is None:
            return truth[:, unseen].sum(axis=1)
        tot = remaining.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, remaining[:, unseen].sum(axis=1) / np.maximum(tot, 1), 0.0)

    model = StrategyModel(strategy) if strategy in MODELS else None
    state = None
    arms, species, was_new, ests, truths, avail = [], [], [], [], [], []
    stopped = False
    for _ in range(config.steps):
        ok = available()
        if not ok.any():
            stopped = True
            break
        tru = true_discovery()
        if strategy == "uniform":
            score, est = np.where(ok, 1.0, -np.inf), None
        elif strategy == "oracle":
            est = tru.copy()
            score = np.where(ok, est, -np.inf)
        else:
            state, res = run_chain(model, counts, config.mcmc_iters_per_step, warm_state=state, rng=rng)
            est = np.where(ok, res.mean, 0.0)
            score = np.where(ok, est, -np.inf)
        best = np.flatnonzero(score == score.max())
        j = int(best[rng.integers(len(best))])
        sp, new = draw(j)
        arms.append(j)
        species.append(sp)
        was_new.append(new)
        ests.append(est)
        truths.append(tru)
        avail.append(ok)
    has_est = strategy != "uniform"
    return Trajectory(
        strategy=strategy, arms=np.array(arms, dtype=np.int64), species=np.array(species, dtype=np.int64),
        was_new=np.array(was_new, dtype=bool),
        estimates=np.array(ests, dtype=float).reshape(len(ests), J) if has_est else None,
        true_discovery=np.array(truths).reshape(len(truths), J), available=np.array(avail).reshape(len(avail), J),
        initially_seen=initially_seen, seen=counts.shape[1], stopped_early=stopped)


def _run_one(args):
    return run_bandit(*args)


def run_replicates(config: BanditConfig, populations: Sequence[ArmPopulation], strategy: str,
                   workers: int = 1) -> list[Trajectory]:
    """All replicates of a strategy; results do not depend on ``workers``."""
    jobs = [(config, populations, strategy, r) for r in range(config.replicates)]
    if workers <= 1:
        return [_run_one(a) for a in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))


# --- metrics -------------------------------------------------------------------------


@dataclass(frozen=True)
class BanditSummary:
    strategy: str
    avg_new_per_step: float
    per_replicate: np.ndarray
    rmse: float | None
    cumulative_mean: np.ndarray
    cumulative_band: np.ndarray = field(repr=False)


def metrics(trajectories: Sequence[Trajectory], band: tuple = (0.05, 0.95)) -> BanditSummary:
    """Average discoveries per step, cumulative-discovery curve with a
    replicate band, and the RMSE of estimated discovery probabilities
    (``None`` for strategies without estimates)."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    per = np.array([t.was_new.sum() / t.steps if t.steps else 0.0 for t in trajectories])
    n = max(t.steps for t in trajectories)
    cum = np.array([np.pad(t.cumulative, (0, n - t.steps), mode="edge") if t.steps else np.zeros(n)
                    for t in trajectories], dtype=float)
    rmse = None
    if all(t.estimates is not None for t in trajectories):
        vals = []
        for t in trajectories:
            m = t.available
            vals.append(math.sqrt(np.mean((t.estimates[m] - t.true_discovery[m]) ** 2)) if m.any() else 0.0)
        rmse = float(np.mean(vals))
    return BanditSummary(trajectories[0].strategy, float(per.mean()), per, rmse, cum.mean(axis=0),
                         np.quantile(cum, band, axis=0) if n else np.zeros((2, 0)))


def paired_sign_test(a: Sequence[float], b: Sequence[float]) -> float:
    """One-sided p-value of a paired sign test for ``a > b`` (ties dropped)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    wins, losses = int((d > 0).sum()), int((d < 0).sum())
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)
