"""Command-line interface.

Every option can also be set through an environment variable named
``GFE_<OPTION>`` (upper case, dashes as underscores), e.g. ``GFE_SEED=3``.
Command-line flags win over the environment.

Exit codes: 0 success, 1 data or validation failure, 2 usage error.

Seeds: ``fit`` gives tree ``i`` (or boosting stage ``i``) the seed
``seed + i``; ``constrain`` seeds GMM fitting with ``seed``;
``verify-bounds`` uses ``seed`` for the sphere dot-product run, ``seed + 1``
and ``seed + 2`` for the two perturbation runs, ``seed + 3`` for the explicit
report and ``seed + 4`` for a synthetic ``z``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from . import bounds, compas
from .constraint import DEFAULT_NOISE, ConstrainedTree
from .data import Dataset, GroupQuery, load_csv, synth_beta_demo, target_function, write_csv
from .ensemble import ConstraintConfig, TreeParams, constrain_members, fit_fair_boost, fit_fair_forest
from .errors import GfeError, InvalidParameter, ZeroZ
from .groupmass import MassEstimator
from .kernelgp import RBF, GpModel
from .modelio import load_model, save_model

log = logging.getLogger("gfe")
ENV_PREFIX = "GFE_"


class _EnvParser(argparse.ArgumentParser):
    """ArgumentParser whose options fall back to ``GFE_*`` variables."""

    def add_argument(self, *flags, **kw):
        long = next((f for f in flags if f.startswith("--")), None)
        if long is not None:
            env = ENV_PREFIX + long[2:].replace("-", "_").upper()
            if env in os.environ:
                raw = os.environ[env]
                action = kw.get("action")
                if action == "store_true":
                    kw["default"] = raw.lower() in ("1", "true", "yes", "on")
                elif action == "append":
                    kw["default"] = [raw.split()] if kw.get("nargs") else [raw]
                else:
                    kw["default"] = kw["type"](raw) if "type" in kw else raw
                kw["required"] = False
        return super().add_argument(*flags, **kw)


def _csv_list(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _pairs(args) -> list[tuple[str, str]]:
    pairs = []
    if args.group_a or args.group_b:
        if not (args.group_a and args.group_b):
            raise _Usage("--group-a and --group-b must be given together")
        pairs.append((args.group_a, args.group_b))
    pairs += [tuple(p) for p in (args.pair or [])]
    return [(str(GroupQuery.parse(a)), str(GroupQuery.parse(b))) for a, b in pairs]


class _Usage(Exception):
    pass


def _load_training(args, meta: dict) -> Dataset:
    columns = meta.get("data", {})
    return load_csv(
        args.data,
        columns.get("target"),
        columns.get("group_columns", []),
        columns.get("feature_columns"),
    )


def _load_features(path, meta: dict, need_target: bool = False) -> Dataset:
    columns = meta.get("data", {})
    target = columns.get("target") if need_target else None
    return load_csv(path, target, columns.get("group_columns", []), columns.get("feature_columns"))


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    shapes = (tuple(float(v) for v in _csv_list(args.shape_a)), tuple(float(v) for v in _csv_list(args.shape_b)))
    if any(len(s) != 2 for s in shapes):
        raise _Usage("--shape-a/--shape-b take two comma-separated numbers")
    ds = synth_beta_demo(args.n, (args.alpha, args.beta), shapes, args.noise, args.seed)
    write_csv(ds, args.out)
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def cmd_fit(args) -> int:
    if args.boost and args.trees > 1:
        raise _Usage("--boost cannot be combined with --trees > 1")
    if args.gp and (args.boost or args.trees > 1):
        raise _Usage("--gp cannot be combined with --trees or --boost")
    feature_columns = _csv_list(args.features) or None
    train = load_csv(args.data, args.target, _csv_list(args.groups), feature_columns)
    params = TreeParams(args.depth, args.min_leaf, args.feature_subsample)
    meta = {
        "data": {
            "target": args.target,
            "group_columns": list(train.group_columns),
            "feature_columns": list(train.feature_names),
        },
        "fit": {"seed": args.seed, **params.to_dict()},
    }
    if args.gp:
        ls = [float(v) for v in _csv_list(args.lengthscale)] or [1.0]
        model = GpModel(RBF(ls, args.amplitude), train.features, train.require_targets(), args.noise)
        meta["fit"].update(kind="gp", noise_variance=args.noise)
    elif args.boost:
        model = fit_fair_boost(train, args.boost, args.learning_rate, params, seed=args.seed)
        meta["fit"].update(kind="boost", n_stages=args.boost, learning_rate=args.learning_rate)
    elif args.trees > 1:
        bootstrap = not args.no_bootstrap
        model = fit_fair_forest(train, args.trees, params, bootstrap, seed=args.seed)
        meta["fit"].update(kind="forest", n_trees=args.trees, bootstrap=bootstrap)
    else:
        model = fit_fair_forest(train, 1, params, False, seed=args.seed).members[0]
        meta["fit"].update(kind="tree")
    save_model(model, args.model_out, meta)
    print(f"wrote {meta['fit']['kind']} model to {args.model_out}")
    return 0


def _z_summary(model) -> list[dict]:
    members = [model] if isinstance(model, ConstrainedTree) else list(model.members)
    out = []
    for k, pair in enumerate(members[0].pairs):
        norms = []
        for m in members:
            z = m.z[:, k]
            n1, n2 = float(np.abs(z).sum()), float(np.linalg.norm(z))
            norms.append((n1, n2, n1 / (math.sqrt(z.size) * n2) if n2 > 0 else math.nan))
        arr = np.array(norms)
        out.append({
            "group_a": pair[0],
            "group_b": pair[1],
            "z_l1_mean": float(arr[:, 0].mean()),
            "z_l2_mean": float(arr[:, 1].mean()),
            "z_norm_ratio_mean": float(np.nanmean(arr[:, 2])) if np.any(arr[:, 1] > 0) else math.nan,
            "members_dropping": sum(k in m.dropped for m in members),
        })
    return out


def cmd_constrain(args) -> int:
    model, meta = load_model(args.model)
    pairs = _pairs(args)
    if not pairs:
        raise _Usage("give --group-a/--group-b or at least one --pair")
    train = _load_training(args, meta)
    estimator = MassEstimator(args.estimator, args.gmm_k, args.seed)
    meta = dict(meta)
    meta["constraint"] = {
        "pairs": [list(p) for p in pairs],
        "representation": args.representation,
        "noise_variance": args.noise,
        "remove_prior": not args.keep_prior,
    }
    if isinstance(model, GpModel):
        if len(pairs) != 1:
            raise _Usage("gp models take exactly one constraint pair")
        model = model.constrain(train, *pairs[0])
        save_model(model, args.model_out, meta)
        print(f"constraint value after fit: {model.system.constraint_value():.3e}")
        return 0

    config = ConstraintConfig(tuple(pairs), args.representation, args.noise, not args.keep_prior, estimator)
    if isinstance(model, ConstrainedTree):
        fixed = config.apply(model.tree, train)
    else:
        fixed = constrain_members(model, train, config)
    meta["estimator"] = estimator.describe()
    save_model(fixed, args.model_out, meta)

    members = [fixed] if isinstance(fixed, ConstrainedTree) else fixed.members
    for row in _z_summary(fixed):
        print(
            f"{row['group_a']} vs {row['group_b']}: |z|_1={row['z_l1_mean']:.6g} "
            f"|z|_2={row['z_l2_mean']:.6g} ratio={row['z_norm_ratio_mean']:.6g} "
            f"dropped-as-dependent in {row['members_dropping']} member(s)"
        )
    if not any(m.constraint_active for m in members):
        print("warning: constraint inactive (group imbalance is zero); model unchanged", file=sys.stderr)
    print(f"wrote constrained model to {args.model_out}")
    return 0


def cmd_predict(args) -> int:
    model, meta = load_model(args.model)
    data = _load_features(args.data, meta)
    pred = model.predict(data.features)

    with open(args.data, newline="", encoding="utf-8") as src, open(args.out, "w", newline="", encoding="utf-8") as dst:
        reader = csv.reader(src)
        writer = csv.writer(dst, lineterminator="\n")
        writer.writerow([*next(reader), args.column])
        i = 0
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            writer.writerow([*row, repr(float(pred[i]))])
            i += 1
    print(f"wrote {len(pred)} predictions to {args.out}")
    return 0


def cmd_audit(args) -> int:
    model, meta = load_model(args.model)
    data = _load_features(args.data, meta)
    pairs = _pairs(args) or None
    report = audit_mod.audit(model, data, pairs, args.hist_bins)
    _write_json(report, args.out)
    hist = args.hist_out or (str(Path(args.out).with_suffix("")) + "_hist.csv" if args.out not in (None, "-") else None)
    if hist:
        audit_mod.write_histogram_csv(report, hist)
    for q, g in report["groups"].items():
        log.info("%s: mean before %.4f after %.4f (n=%d)", q, g["mean_before"], g["mean_after"], g["n"])
    return 0


def cmd_verify_bounds(args) -> int:
    note = None
    m = args.m
    if args.model:
        model, _ = load_model(args.model)
        if isinstance(model, GpModel):
            raise InvalidParameter("bounds apply to tree models only")
        first = model if isinstance(model, ConstrainedTree) else model.members[0]
        if first.n_constraints == 0 or not first.constraint_active:
            z = None
        else:
            z = first.z[:, 0]
        L = first.n_leaves
        if m is None:
            m = max(1, int(round(float(np.mean(first.tree.leaf_count)))))
    elif args.L:
        L = args.L
        z = np.random.default_rng(args.seed + 4).standard_normal(L)
        z -= z.mean()
    else:
        raise _Usage("give --model or --L")
    m = m or 4

    sphere = bounds.sphere_dot_mc(L, args.samples, args.seed)
    report = {"L": L, "sphere_dot": sphere.to_dict()}
    ok = sphere.within()
    if z is None or not np.any(z != 0):
        note = "constraint inactive, bounds vacuous"
    else:
        th = {}
        for offset, norm in ((1, "scaled"), (2, "unit")):
            r = bounds.perturbation_mc(z, args.samples, args.seed + offset, norm)
            th[norm] = r.to_dict()
            ok = ok and bool(r.passed)
        report["perturbation"] = th
        report["explicit"] = bounds.explicit_bound_report(
            z, m, args.noise, args.samples, args.seed + 3
        ).to_dict()
        report["explicit"]["m"] = m
        report["explicit"]["noise_variance"] = args.noise
    if note:
        report["note"] = note
        print(note)
    report["passed"] = ok
    _write_json(report, args.out)
    return 0 if ok else 1


def cmd_prepare_compas(args) -> int:
    n = compas.prepare_compas(args.raw, args.out)
    print(f"kept {n} rows; wrote {args.out}")
    return 0


def cmd_demo(args) -> int:
    """Synthetic two-Beta demo: tree, forest and GP before/after, as CSVs."""
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = synth_beta_demo(args.n, (args.alpha, args.beta), noise=args.noise, seed=args.seed)
    pair = ("group=A", "group=B")
    config = ConstraintConfig((pair,), args.representation, args.noise_variance)
    params = TreeParams(args.depth, args.min_leaf, 1.0)
    models = {
        "tree": fit_fair_forest(data, 1, params, False, config, args.seed).members[0],
        "forest": fit_fair_forest(data, args.trees, params, True, config, args.seed),
        "gp": GpModel(RBF([args.lengthscale]), data.features, data.require_targets(), args.gp_noise).constrain(data, *pair),
    }
    grid = np.linspace(0.0, 1.0, 201)
    curves = {"truth": target_function(grid, args.alpha, args.beta)}
    summary = {}
    for name, model in models.items():
        curves[f"{name}_before"] = model.predict_unconstrained(grid[:, None])
        curves[f"{name}_after"] = model.predict(grid[:, None])
        report = audit_mod.audit(model, data, [pair], args.hist_bins)
        audit_mod.write_histogram_csv(report, out / f"{name}_hist.csv")
        summary[name] = report
    write_csv(data, out / "data.csv")
    audit_mod.write_curve_csv(out / "curves.csv", grid, curves)
    _write_json({k: {"groups": v["groups"], "constraints": v["constraints"],
                     "rms_perturbation": v["rms_perturbation"]} for k, v in summary.items()},
                out / "summary.json")
    for name, rep in summary.items():
        gap = rep["constraints"][0]["gap_after"]
        print(f"{name}: group-mean gap before {rep['constraints'][0]['gap_before']:+.4f}, after {gap:+.2e}")
    return 0


# ---------------------------------------------------------------- parser


def _add_pair_flags(p) -> None:
    p.add_argument("--group-a", help="group query, e.g. race=AfricanAmerican")
    p.add_argument("--group-b", help="second group query")
    p.add_argument("--pair", nargs=2, action="append", metavar=("QUERY_A", "QUERY_B"),
                   help="additional constraint pair (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _EnvParser(prog="gfe", description="Group-fairness-in-expectation constraints for trees and GPs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_EnvParser)

    p = sub.add_parser("synth", help="write the two-Beta synthetic dataset")
    p.add_argument("--alpha", type=float, required=True, help="alpha in x cos(alpha x^2) + sin(beta x)")
    p.add_argument("--beta", type=float, required=True, help="beta in x cos(alpha x^2) + sin(beta x)")
    p.add_argument("--n", type=int, default=200, help="rows per group")
    p.add_argument("--noise", type=float, default=0.0, help="observation noise std")
    p.add_argument("--shape-a", default="2,3")
    p.add_argument("--shape-b", default="3,2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit an unconstrained tree, forest, boost or GP")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--groups", default="", help="comma-separated group columns")
    p.add_argument("--features", default="", help="comma-separated feature columns (default: all others)")
    p.add_argument("--model-out", required=True)
    p.add_argument("--trees", type=int, default=1)
    p.add_argument("--no-bootstrap", action="store_true")
    p.add_argument("--boost", type=int, default=0, help="number of boosting stages")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--feature-subsample", type=float, default=1.0)
    p.add_argument("--gp", action="store_true", help="fit an RBF Gaussian process instead")
    p.add_argument("--lengthscale", default="0.1", help="comma-separated RBF lengthscales")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.01, help="GP noise variance")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("constrain", help="apply fairness constraints to a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="training CSV used to compute group masses")
    _add_pair_flags(p)
    p.add_argument("--estimator", choices=("empirical", "gmm"), default="empirical")
    p.add_argument("--gmm-k", type=int, default=2)
    p.add_argument("--representation", choices=("compressed", "explicit"), default="compressed")
    p.add_argument("--noise", type=float, default=DEFAULT_NOISE, help="noise variance")
    p.add_argument("--keep-prior", action="store_true", help="keep the 1/(1+noise) factor (compressed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_constrain)

    p = sub.add_parser("predict", help="append predictions to a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--column", default="prediction")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("audit", help="group means before/after, residuals, histograms")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--hist-bins", type=int, default=20)
    p.add_argument("--hist-out", default=None)
    _add_pair_flags(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("verify-bounds", help="Monte Carlo checks of the perturbation bounds")
    p.add_argument("--model")
    p.add_argument("--L", type=int)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--m", type=int, default=None, help="rows per leaf for the explicit report")
    p.add_argument("--noise", type=float, default=DEFAULT_NOISE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("prepare-compas", help="preprocess the ProPublica two-year COMPAS CSV")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare_compas)

    p = sub.add_parser("demo", help="run the synthetic two-Beta demo end to end")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.05, help="observation noise std")
    p.add_argument("--trees", type=int, default=20)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--representation", choices=("compressed", "explicit"), default="compressed")
    p.add_argument("--noise-variance", type=float, default=DEFAULT_NOISE)
    p.add_argument("--lengthscale", type=float, default=0.1)
    p.add_argument("--gp-noise", type=float, default=0.01)
    p.add_argument("--hist-bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        parser.error(str(exc))
    except ZeroZ as exc:
        print(f"warning: {exc}", file=sys.stderr)
        return 0
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return 1
    except GfeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
