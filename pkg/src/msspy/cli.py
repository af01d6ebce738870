"""Command-line interface: ``mssp <eppf|diagnose|curve|chain|bandit> ...``.

Exit codes: 0 on success, 1 for usage or validation errors, 2 for runtime
errors (missing files, failures during a run).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from . import bandit as bd
from . import diagnostics as dg
from . import inference as inf
from .eppf import family_from_dict, family_to_dict, log_eppf, predictive, total_mass_check
from .multivariate import Additive, Hierarchical, Independent, MsspSpec, Nested

THREADS_ENV = "MSSP_THREADS"


class UsageError(Exception):
    pass


# --- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    """Declarative run description, serializable to TOML."""

    subcommand: str
    spec: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    budgets: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    format: str = "csv"

    def validate(self) -> None:
        if self.subcommand not in COMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")
        if self.format not in ("csv", "json"):
            raise UsageError(f"unknown output format {self.format!r}")
        if self.spec:
            try:
                spec_from_dict(self.spec)
            except (ValueError, KeyError, TypeError) as e:
                raise UsageError(f"invalid spec: {e}") from None


def emit_config(config: RunConfig) -> str:
    return tomli_w.dumps(asdict(config))


def parse_config(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"invalid config file: {e}") from None
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    if "subcommand" not in data:
        raise UsageError("config needs a subcommand")
    return RunConfig(**data)


def spec_from_dict(d: dict) -> MsspSpec:
    """Build a construction from its key-value description.

    ``type`` is one of ``independent``, ``hierarchical``, ``nested`` or
    ``additive``; families are tables such as ``{family = "dp", alpha = 1.0}``.
    """
    kind = str(d.get("type", "")).lower()
    if kind == "independent":
        return Independent(tuple(family_from_dict(f) for f in d["families"]))
    if kind == "hierarchical":
        return Hierarchical(tuple(family_from_dict(f) for f in d["children"]), family_from_dict(d["root"]))
    if kind == "nested":
        return Nested(family_from_dict(d["root"]), family_from_dict(d["within"]))
    if kind == "additive":
        return Additive(tuple(d["eps"]), family_from_dict(d["shared"]),
                        tuple(family_from_dict(f) for f in d["idio"]))
    raise ValueError(f"unknown construction type {kind!r}")


def spec_to_dict(spec: MsspSpec) -> dict:
    if isinstance(spec, Independent):
        return {"type": "independent", "families": [family_to_dict(f) for f in spec.families]}
    if isinstance(spec, Hierarchical):
        return {"type": "hierarchical", "root": family_to_dict(spec.root),
                "children": [family_to_dict(f) for f in spec.children]}
    if isinstance(spec, Nested):
        return {"type": "nested", "root": family_to_dict(spec.root), "within": family_to_dict(spec.within)}
    if isinstance(spec, Additive):
        return {"type": "additive", "eps": list(spec.eps), "shared": family_to_dict(spec.shared),
                "idio": [family_to_dict(f) for f in spec.idio]}
    raise TypeError(f"unknown spec {spec!r}")


# --- output ------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return x


def write_table(header, rows, fmt="csv", out=None):
    """Write rows as CSV (full-precision floats) or as a JSON list of records."""
    rows = [[_fmt(v) for v in r] for r in rows]
    buf = io.StringIO()
    if fmt == "json":
        recs = [dict(zip(header, [_json_value(v) for v in r])) for r in rows]
        json.dump(recs, buf, indent=1)
        buf.write("\n")
    else:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    text = buf.getvalue()
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _json_value(v):
    if isinstance(v, str):
        try:
            f = float(v)
        except ValueError:
            return v
        return f if math.isfinite(f) else v
    return v


# --- argument parsing ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _number(text: str):
    try:
        if "," in text:
            return tuple(_number(t) for t in text.split(",") if t)
        f = float(text)
        return int(f) if f.is_integer() and "." not in text and "e" not in text.lower() else f
    except ValueError:
        raise UsageError(f"not a number: {text!r}") from None


def _extra_params(extra):
    """Turn leftover ``--name value`` pairs into a parameter dict."""
    params = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        name = tok[2:].replace("-", "_")
        if "=" in name:
            name, val = name.split("=", 1)
        else:
            try:
                val = next(it)
            except StopIteration:
                raise UsageError(f"missing value for {tok}") from None
        params[name] = _number(val)
    return params


def build_parser():
    p = _Parser(prog="mssp", description="Multivariate species sampling processes.", allow_abbrev=False)
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker cap (default from ${THREADS_ENV}, else 1)")
    # global options are also accepted after the subcommand
    common = _Parser(add_help=False, allow_abbrev=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--output", "-o")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)

    e = sub.add_parser("eppf", parents=[common], allow_abbrev=False, help="evaluate an EPPF or predictive rule")
    e.add_argument("--family", choices=("dp", "pyp", "py", "dm", "gn"))
    e.add_argument("--alpha", type=float)
    e.add_argument("--sigma", type=float, default=0.0)
    e.add_argument("--M", type=int)
    e.add_argument("--tau", type=float)
    e.add_argument("--gamma", type=float)
    e.add_argument("--sizes", default="")
    e.add_argument("--predictive", action="store_true", help="print the predictive weights")
    e.add_argument("--check", action="store_true", help="sum the EPPF over all partitions of [n]")
    e.add_argument("--n", type=int)

    d = sub.add_parser("diagnose", parents=[common], allow_abbrev=False, help="tie probabilities and correlation")
    d.add_argument("--model")
    d.add_argument("--spec", help="TOML construction file")
    d.add_argument("--mc", type=int, default=0, help="Monte Carlo samples (0 = closed form only)")
    d.add_argument("--j", type=int, default=0)
    d.add_argument("--k", type=int, default=1)
    d.add_argument("--groups", type=int, default=None, help="number of groups for nested specs")

    c = sub.add_parser("curve", parents=[common], allow_abbrev=False, help="discovery curve between two groups")
    c.add_argument("--model")
    c.add_argument("--spec")
    c.add_argument("--j", type=int, default=0)
    c.add_argument("--k", type=int, default=1)
    c.add_argument("--n-max", type=int, default=50)
    c.add_argument("--samples", type=int, default=10_000)
    c.add_argument("--groups", type=int, default=None)

    m = sub.add_parser("chain", parents=[common], allow_abbrev=False,
                       help="posterior discovery probabilities of a count matrix")
    m.add_argument("--model", default="HierPY", help="strategy model name")
    counts = m.add_mutually_exclusive_group()
    counts.add_argument("--counts", help="inline counts, groups separated by ';' (e.g. '3,1,0;0,2,4')")
    counts.add_argument("--counts-file", help="CSV with one row of species counts per group")
    m.add_argument("--iters", type=int, default=inf.ITERS_PER_STEP)
    m.add_argument("--trace", default=None, help="per-sweep chain trace CSV")

    b = sub.add_parser("bandit", parents=[common], allow_abbrev=False, help="species-discovery bandit")
    src = b.add_mutually_exclusive_group()
    src.add_argument("--data", help="species-by-plot CSV")
    src.add_argument("--synthetic", action="store_true")
    b.add_argument("--strategy", default="uniform", help="strategy name or 'all'")
    b.add_argument("--replicates", type=int, default=None)
    b.add_argument("--steps", type=int, default=None)
    b.add_argument("--init", type=int, default=None)
    b.add_argument("--iters", type=int, default=None)
    b.add_argument("--total-species", type=int, default=3000)
    b.add_argument("--support", type=int, default=2500)
    b.add_argument("--exponents", default="1.3,1.3,1.3,1.3,2,2,2,2")
    b.add_argument("--trajectory", default=None, help="per-step trajectory CSV")
    b.add_argument("--summary", default=None, help="summary CSV (default stdout)")
    return p


# --- commands -------------------------------------------------------------------------


def _sizes(text):
    if not text:
        return []
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"sizes must be comma-separated integers, got {text!r}") from None


def cmd_eppf(args, cfg: RunConfig) -> int:
    fam_dict = cfg.params.get("family") or {
        "family": args.family, "alpha": args.alpha, "sigma": args.sigma, "M": args.M,
        "tau": args.tau, "gamma": args.gamma}
    fam_dict = {k: v for k, v in fam_dict.items() if v is not None}
    if "family" not in fam_dict:
        raise UsageError("eppf needs --family")
    try:
        fam = family_from_dict(fam_dict)
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None
    if args.check:
        if args.n is None:
            raise UsageError("--check needs --n")
        try:
            total = total_mass_check(fam, args.n)
        except ValueError as e:
            raise UsageError(str(e)) from None
        sys.stdout.write(f"sum={total:.9f}\n")
        return 0
    sizes = _sizes(args.sizes)
    try:
        if args.predictive:
            pw = predictive(fam, sizes)
            rows = [[f"join {k + 1}", p] for k, p in enumerate(pw.existing)] + [["new", pw.new]]
            write_table(["outcome", "probability"], rows, cfg.format, args.output)
            return 0
        lp = log_eppf(fam, sizes)
    except ValueError as e:
        raise UsageError(str(e)) from None
    write_table(["eppf", "log_eppf"], [[math.exp(lp), lp]], cfg.format, args.output)
    return 0


def _load_spec(args, cfg):
    if args.spec:
        path = Path(args.spec)
        if not path.exists():
            raise FileNotFoundError(f"spec file {path} does not exist")
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as e:
            raise UsageError(f"invalid spec file: {e}") from None
        data = data.get("spec", data)
    elif cfg.spec:
        data = cfg.spec
    else:
        return None
    try:
        return spec_from_dict(data)
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"invalid spec: {e}") from None


def cmd_diagnose(args, cfg: RunConfig) -> int:
    spec = _load_spec(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    mc = int(cfg.budgets.get("mc", args.mc))
    j, k = args.j, args.k
    cols = ["within_j", "within_k", "across", "correlation"]
    if spec is None:
        if not args.model:
            raise UsageError("diagnose needs --model or --spec")
        try:
            cf = dg.closed_form_registry(args.model, **cfg.params)
        except dg.UnsupportedModelError as e:
            raise UsageError(str(e)) from None
        sim = dg.named_simulator(args.model, **cfg.params) if mc else None
    else:
        try:
            cf = dg.tie_probabilities_exact(spec, j, k, J=args.groups)
        except ValueError as e:
            raise UsageError(str(e)) from None
        sim = spec
    if mc:
        t = dg.tie_probabilities_mc(sim, j, k, mc, rng, J=args.groups)
        rows = [[c, getattr(cf, c), getattr(t, c), t.stderr[c]] for c in cols]
        write_table(["quantity", "closed_form", "monte_carlo", "stderr"], rows, cfg.format, args.output)
    else:
        write_table(["quantity", "closed_form"], [[c, getattr(cf, c)] for c in cols], cfg.format, args.output)
    return 0


def cmd_curve(args, cfg: RunConfig) -> int:
    spec = _load_spec(args, cfg)
    if spec is None:
        if not args.model:
            raise UsageError("curve needs --model or --spec")
        try:
            spec = dg.named_spec(args.model, **cfg.params)
        except (dg.UnsupportedModelError, KeyError) as e:
            raise UsageError(f"cannot build model {args.model!r}: {e}") from None
    n_max = int(cfg.budgets.get("n_max", args.n_max))
    samples = int(cfg.budgets.get("samples", args.samples))
    if samples < 1 or n_max < 0:
        raise UsageError("need --samples >= 1 and --n-max >= 0")
    rng = np.random.default_rng(cfg.seed)
    try:
        curve = dg.discovery_curve(spec, args.j, args.k, n_max, samples, rng, J=args.groups)
    except ValueError as e:
        raise UsageError(str(e)) from None
    write_table(["n", "estimate", "stderr"], [[int(r[0]), r[1], r[2]] for r in curve], cfg.format, args.output)
    return 0


def _counts(args):
    if args.counts_file:
        path = Path(args.counts_file)
        if not path.exists():
            raise FileNotFoundError(f"counts file {path} does not exist")
        rows = [r for r in csv.reader(path.read_text().splitlines()) if r]
    elif args.counts:
        rows = [r.split(",") for r in args.counts.split(";")]
    else:
        raise UsageError("chain needs --counts or --counts-file")
    try:
        arr = np.array([[int(x) for x in r] for r in rows], dtype=np.int64)
    except ValueError:
        raise UsageError("counts must be integers with the same number of species per group") from None
    if arr.ndim != 2 or np.any(arr < 0):
        raise UsageError("counts must be a non-negative matrix with one row per group")
    if arr.shape[1] and np.any(arr.sum(axis=0) == 0):
        raise UsageError("every species column needs at least one observation")
    return arr


def cmd_chain(args, cfg: RunConfig) -> int:
    try:
        model = inf.StrategyModel(bd.canonical_strategy(cfg.params.get("model", args.model)))
    except ValueError as e:
        raise UsageError(str(e)) from None
    if model.kind not in inf.MODELS:
        raise UsageError(f"chain needs a model strategy, one of {', '.join(inf.MODELS)}")
    iters = int(cfg.budgets.get("iters", args.iters))
    if iters < 1:
        raise UsageError("--iters must be at least 1")
    counts = _counts(args)
    _, est = inf.run_chain(model, counts, iters, rng=np.random.default_rng(cfg.seed))
    if args.trace:
        write_table(inf.chain_trace_header(counts.shape[0]), inf.chain_trace_rows(est.trace), "csv", args.trace)
    rows = [[j + 1, m, se] for j, (m, se) in enumerate(zip(est.mean, est.mcse))]
    write_table(["group", "discovery_probability", "mcse"], rows, cfg.format, args.output)
    return 0


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"${THREADS_ENV} must be an integer") from None
    return 1


def cmd_bandit(args, cfg: RunConfig) -> int:
    b = cfg.budgets
    synthetic = args.synthetic or not args.data
    defaults = bd.BanditConfig()
    try:
        config = bd.BanditConfig(
            init_per_arm=int(b.get("init", args.init if args.init is not None else defaults.init_per_arm)),
            steps=int(b.get("steps", args.steps if args.steps is not None else defaults.steps)),
            replicates=int(b.get("replicates", args.replicates if args.replicates is not None
                                 else defaults.replicates)),
            mcmc_iters_per_step=int(b.get("iters", args.iters if args.iters is not None
                                          else defaults.mcmc_iters_per_step)),
            seed=cfg.seed, mode="iid" if synthetic else "without-replacement")
        strategies = bd.STRATEGIES if args.strategy == "all" else (bd.canonical_strategy(args.strategy),)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if synthetic:
        exps = _number(args.exponents)
        exps = exps if isinstance(exps, tuple) else (exps,)
        try:
            pops = bd.generate_zipf_arms(args.total_species, args.support, exps,
                                         np.random.default_rng([cfg.seed, 0x5EED]))
        except ValueError as e:
            raise UsageError(str(e)) from None
    else:
        pops = bd.load_tree_csv(args.data)
    workers = _threads(args)
    summary_rows, traj_rows = [], []
    J = len(pops)
    for s in strategies:
        trajs = bd.run_replicates(config, pops, s, workers=workers)
        m = bd.metrics(trajs)
        summary_rows.append([s, m.avg_new_per_step, "NA" if m.rmse is None else m.rmse])
        for r, t in enumerate(trajs):
            traj_rows += [[s, r + 1, *row] for row in t.rows()]
    if args.trajectory:
        header = ["strategy", "replicate", "step", "arm", "species_id", "was_new"] + \
                 [f"est_prob_arm_{a + 1}" for a in range(J)]
        write_table(header, traj_rows, "csv", args.trajectory)
    write_table(["strategy", "avg_new_per_step", "rmse"], summary_rows, cfg.format,
                args.summary or args.output)
    return 0


COMMANDS = {"eppf": cmd_eppf, "diagnose": cmd_diagnose, "curve": cmd_curve, "chain": cmd_chain,
            "bandit": cmd_bandit}


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
        pre.add_argument("--config")
        config_path = pre.parse_known_args(argv)[0].config
        cfg = parse_config(Path(config_path).read_text()) if config_path else None
        if cfg is not None and not any(a in COMMANDS for a in argv):
            # the config names the subcommand; splice it in after the --config option
            i = next(i for i, a in enumerate(argv) if a == "--config" or a.startswith("--config="))
            cut = i + (1 if "=" in argv[i] else 2)
            argv = [*argv[:cut], cfg.subcommand, *argv[cut:]]
        args, extra = parser.parse_known_args(argv)
        if args.subcommand is None:
            raise UsageError(f"a subcommand is required: {', '.join(COMMANDS)}")
        if cfg is None:
            cfg = RunConfig(subcommand=args.subcommand)
        if args.subcommand not in ("diagnose", "curve") and extra:
            raise UsageError(f"unrecognized arguments: {' '.join(extra)}")
        cfg.subcommand = args.subcommand
        cfg.params = {**cfg.params, **_extra_params(extra)}
        if args.seed is not None:
            cfg.seed = args.seed
        if args.format is not None:
            cfg.format = args.format
        cfg.validate()
        return COMMANDS[cfg.subcommand](args, cfg)
    except UsageError as e:
        print(f"mssp: error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, OSError, RuntimeError, ValueError) as e:
        print(f"mssp: runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
