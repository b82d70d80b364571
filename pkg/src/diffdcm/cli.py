"""``diffdcm`` command-line interface.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Every command that writes files also writes a ``*.manifest.json`` next to them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, data, interpretation, model, training
from .baseline_mnl import MnlSpec, mnl_estimate, mnl_predict
from .errors import DiffDCMError, NumericalError
from .experiments import EXPERIMENTS, TOLERANCES, run_experiment, scaling_benchmark

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(DiffDCMError):
    pass


def _default_seed() -> int:
    env = os.environ.get("DIFFDCM_SEED")
    try:
        return int(env) if env else 0
    except ValueError:
        return 0


def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(target: Path, args: argparse.Namespace, inputs: list, started: float) -> Path:
    """RunManifest: command, resolved config, seed, input digests, version, duration."""
    config = {k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")}
    manifest = {
        "command": args.command,
        "argv": args._argv,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _digest(p) for p in inputs if p is not None},
        "tool_version": __version__,
        "duration_seconds": time.perf_counter() - started,
    }
    path = target.with_name(target.name + ".manifest.json") if not target.is_dir() else target / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _ensure_dir(path: str | Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return path


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}; expected comma-separated numbers") from None


def _alts(text: str | None) -> list[str] | None:
    return [a.strip() for a in text.split(",")] if text else None


def _load_model(path):
    params, norm = model.load_checkpoint(path)
    return params, (data.Normalization.from_dict(norm) if norm else None)


def _load_for_model(path, params, norm, label_column="choice") -> data.Dataset:
    ds = data.load_csv(path, label_column, params.alt_names)
    if ds.feature_names != params.feature_names:
        raise UsageError(f"{path}: columns {ds.feature_names} do not match model features {params.feature_names}")
    return data.normalize(ds, norm) if norm is not None else ds


# --- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _ensure_dir(args.out)
    spec = data.SyntheticSpec(args.kind, args.n_train, args.n_test, args.seed)
    train, test = data.synthesize(spec)
    paths = [out / f"{args.kind}_train.csv", out / f"{args.kind}_test.csv"]
    for ds, p in zip((train, test), paths):
        data.write_csv(ds, p)
        write_manifest(p, args, [], args._started)
    print(f"wrote {paths[0]} ({len(train)} rows) and {paths[1]} ({len(test)} rows)")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = data.load_csv(args.data, args.label_column, _alts(args.alts))
    ds = data.normalize(ds)
    cfg = training.TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        weight_decay=args.weight_decay,
        simplify=args.simplify,
        seed=args.seed,
        nodes=args.nodes,
    )
    report = training.train(ds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(out, report.final_params, ds.normalization.to_dict())
    hist = out.with_name(out.stem + "_loss.csv")
    training.write_loss_history(hist, report.loss_history)
    write_manifest(out, args, [args.data], args._started)
    final = report.loss_history[-1] if report.loss_history else float("nan")
    print(f"final train loss: {final:.6f}  ({report.wall_clock_seconds:.2f} s)")
    print(f"wrote {out} and {hist}")
    return EXIT_OK


def cmd_extract(args) -> int:
    params, norm = _load_model(args.model)
    exprs = interpretation.extract_utilities(params)
    if args.reference is not None:
        exprs = interpretation.normalize_ascs(exprs, args.reference)
    if args.format == "json":
        text = json.dumps(interpretation.utilities_to_json(exprs), indent=2)
    else:
        text = interpretation.utilities_to_text(exprs, args.prune)
    inputs = [args.model]
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        if args.data:
            ds = _load_for_model(args.data, params, norm, args.label_column)
            ranking = interpretation.rank_influential_terms(exprs, ds)
            interpretation.write_influence_csv(out.with_name(out.stem + "_influence.csv"), ranking)
            inputs.append(args.data)
        write_manifest(out, args, inputs, args._started)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    params, norm = _load_model(args.model)
    ds = _load_for_model(args.data, params, norm, args.label_column)
    text = analysis.metrics_json(analysis.predict_metrics(params, ds))
    if args.out:
        out = Path(args.out)
        out.write_text(text + "\n")
        write_manifest(out, args, [args.model, args.data], args._started)
    print(text)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    params, norm = _load_model(args.model)
    ds = _load_for_model(args.data, params, norm, args.label_column)
    report = analysis.average_marginal_utility(params, ds)
    out = Path(args.out)
    analysis.write_sensitivity_csv(out, report)
    write_manifest(out, args, [args.model, args.data], args._started)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_intervene(args) -> int:
    params, norm = _load_model(args.model)
    x0 = _parse_vector(args.x)
    if x0.size != params.n:
        raise UsageError(f"--x has {x0.size} values, model expects {params.n}")
    if args.raw:
        if norm is None:
            raise UsageError("--raw needs a model with a normalisation record")
        x0 = norm.apply(x0)
    if not 1 <= args.target <= params.l:
        raise UsageError(f"--target {args.target} out of range 1..{params.l}")
    cfg = analysis.InterventionConfig(args.target, args.gamma, args.steps, early_stop_prob=args.early_stop)
    ipath = analysis.intervention_path(params, x0, cfg)
    out = Path(args.out)
    analysis.write_path_csv(out, ipath, params.feature_names, params.alt_names)
    write_manifest(out, args, [args.model], args._started)
    final = int(np.argmax(ipath.probs[-1])) + 1
    print(f"final choice {final} (target {args.target}); p_target {ipath.probs[0][args.target - 1]:.4g} -> "
          f"{ipath.probs[-1][args.target - 1]:.4g}; wrote {out}")
    return EXIT_OK


def cmd_mnl(args) -> int:
    spec = MnlSpec.load(args.spec)
    ds = data.load_csv(args.data, args.label_column, _alts(args.alts))
    trn = data.normalize(ds)
    est = mnl_estimate(spec, trn, max_iter=args.max_iter, tol=args.tol)
    report = {"estimate": est.as_dict(), "train": _metrics(mnl_predict(spec, est, trn))}
    inputs = [args.spec, args.data]
    if args.test:
        tst = data.normalize(data.load_csv(args.test, args.label_column, trn.alt_names), trn.normalization)
        report["test"] = _metrics(mnl_predict(spec, est, tst))
        inputs.append(args.test)
    sys.stdout.write(est.table())
    if "test" in report:
        print(f"test accuracy {report['test']['accuracy']:.4f}, test LL {report['test']['log_likelihood']:.3f}")
    if args.out:
        out = Path(args.out)
        out.write_text(json.dumps(report, indent=2))
        out.with_suffix(".txt").write_text(est.table())
        write_manifest(out, args, inputs, args._started)
    return EXIT_OK


def _metrics(m: dict) -> dict:
    return {k: m[k] for k in ("accuracy", "log_likelihood", "n")}


def cmd_screen(args) -> int:
    filters = json.loads(Path(args.filter).read_text()) if args.filter else None
    ds = data.swissmetro_screen(data.read_table(args.raw), filters)
    print(f"retained {len(ds)} rows (reference screening: 9036)")
    out = Path(args.out)
    data.write_csv(ds, out)
    write_manifest(out, args, [args.raw] + ([args.filter] if args.filter else []), args._started)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out = _ensure_dir(args.out)
    if args.experiment == "swissmetro":
        if not args.data:
            raise UsageError("--data is required for the swissmetro experiment (the published swissmetro.dat)")
        if not Path(args.data).exists():
            raise UsageError(f"Swissmetro file not found: {args.data}")
    result = run_experiment(args.experiment, args.seed, args.data)
    params = result.params
    model.save_checkpoint(out / "model.json", params, result.train.normalization.to_dict())
    training.write_loss_history(out / "loss_history.csv", result.report.loss_history)
    exprs = interpretation.extract_utilities(params)
    (out / "utilities.txt").write_text(interpretation.utilities_to_text(exprs, TOLERANCES["structure_prune_threshold"]))
    (out / "utilities.json").write_text(json.dumps(interpretation.utilities_to_json(exprs), indent=2))
    analysis.write_sensitivity_csv(out / "sensitivity.csv", analysis.average_marginal_utility(params, result.train))
    interpretation.write_influence_csv(
        out / "influence.csv", interpretation.rank_influential_terms(exprs, result.train)
    )
    data.write_csv(result.raw_test, out / "test.csv")
    if "intervention" in result.extras:
        analysis.write_path_csv(out / "intervention_path.csv", result.extras["intervention"], params.feature_names, params.alt_names)
    if "mnl" in result.extras:
        (out / "mnl_table.txt").write_text(result.extras["mnl"].table())
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(result.summary, indent=2, default=_jsonable))
    write_manifest(out, args, [args.data] if args.data else [], args._started)
    for name, ok in result.summary["checks"].items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    a = result.summary["achieved"]
    print(f"test accuracy {a['accuracy']:.4f} (reference {result.summary['reference'].get('accuracy')})")
    print(f"wrote {summary_path}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def cmd_scaling(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    rows, r2 = scaling_benchmark(sizes, args.seed, args.epochs)
    out = Path(args.out)
    out.write_text("n_samples,seconds\n" + "".join(f"{n},{t!r}\n" for n, t in rows))
    write_manifest(out, args, [], args._started)
    for n, t in rows:
        print(f"{n:>8d} samples: {t:.2f} s")
    print(f"linear fit R^2 = {r2:.4f}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffdcm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    seed = _default_seed()

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        return sp

    def data_opts(sp, required=True):
        sp.add_argument("--data", required=required, help="CSV with one row per observation")
        sp.add_argument("--label-column", default="choice")

    sp = add("synth", cmd_synth, "generate a synthetic dataset")
    sp.add_argument("--kind", required=True, choices=data.KINDS)
    sp.add_argument("--n-train", type=int, default=10000)
    sp.add_argument("--n-test", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("train", cmd_train, "train a model on a CSV dataset")
    data_opts(sp)
    sp.add_argument("--alts", help="comma-separated alternative names (default 1..l)")
    sp.add_argument("--nodes", type=int, default=10)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch", type=int, default=50)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--weight-decay", type=float, default=0.0)
    sp.add_argument("--simplify", action="store_true", help="round exponents and refit the output layer")
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", required=True, help="model checkpoint path (.json)")

    sp = add("extract", cmd_extract, "print closed-form utilities of a trained model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--prune", type=float, default=0.0, help="hide terms with |coefficient| below this")
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("--reference", type=int, help="normalise constants to this 1-based alternative")
    data_opts(sp, required=False)
    sp.add_argument("--out")

    sp = add("predict", cmd_predict, "accuracy and log-likelihood on a labelled CSV")
    sp.add_argument("--model", required=True)
    data_opts(sp)
    sp.add_argument("--out")

    sp = add("sensitivity", cmd_sensitivity, "average marginal utilities")
    sp.add_argument("--model", required=True)
    data_opts(sp)
    sp.add_argument("--out", required=True)

    sp = add("intervene", cmd_intervene, "gradient path moving an individual towards a target choice")
    sp.add_argument("--model", required=True)
    sp.add_argument("--x", required=True, help="comma-separated starting features (normalised space)")
    sp.add_argument("--raw", action="store_true", help="--x is in raw units; apply the model's normalisation")
    sp.add_argument("--target", type=int, required=True, help="1-based target alternative")
    sp.add_argument("--gamma", type=float, default=0.05)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--early-stop", type=float, help="stop once the target probability exceeds this")
    sp.add_argument("--out", default="intervention_path.csv")

    sp = add("mnl", cmd_mnl, "fit a linear multinomial logit benchmark")
    data_opts(sp)
    sp.add_argument("--spec", required=True, help="MNL specification JSON")
    sp.add_argument("--alts", help="comma-separated alternative names")
    sp.add_argument("--test", help="held-out CSV for prediction metrics")
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--out", help="JSON report path (a .txt table is written beside it)")

    sp = add("screen", cmd_screen, "screen the raw Swissmetro file into a model-ready CSV")
    sp.add_argument("--raw", required=True, help="published tab-separated Swissmetro file")
    sp.add_argument("--filter", help="JSON list of {column, op, value} predicates")
    sp.add_argument("--out", required=True)

    sp = add("reproduce", cmd_reproduce, "run one experiment end to end and write a summary")
    sp.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    sp.add_argument("--data", help="Swissmetro file (swissmetro experiment only)")
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", default="results")

    sp = add("scaling", cmd_scaling, "time training at several sample counts")
    sp.add_argument("--sizes", default="1000,10000,100000")
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--out", default="scaling.csv")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    args._started = time.perf_counter()
    args._argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"diffdcm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DiffDCMError, OSError) as exc:
        print(f"diffdcm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
