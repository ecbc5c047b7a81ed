"""Command-line entry point: simulate, fit, evaluate, baseline, coclust.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import double_kmeans
from .cavi import run_cavi
from .coclust import coclust_table
from .experiments import score, stack_truths
from .model import (
    Hyperparameters,
    NIGPrior,
    PartitionEstimate,
    load_manifest,
    parse_beta,
    write_grid_csv,
    write_manifest,
    write_matrix_csv,
)
from .simgen import NOISY_MEANS, PEAK_MEANS, SIGNAL, BiclusterTruth, gen_noisy_collection, gen_peaks_scenario, noisy_grid

logger = logging.getLogger("poseidon")

CI_ENV = "POSEIDON_CI"
THREADS_ENV = "POSEIDON_THREADS"


class CommandError(RuntimeError):
    """Failure reported with exit code 1."""


# ------------------------------------------------------------------ arg types


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from err


def _beta(text: str):
    try:
        return parse_beta(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from err


def _nig(text: str) -> NIGPrior:
    vals = _float_list(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected m0,k0,c0,d0")
    try:
        return NIGPrior(*vals)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from err


# ------------------------------------------------------------------ helpers


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return _positive_int(env)
        except (ValueError, argparse.ArgumentTypeError) as err:
            raise CommandError(f"{THREADS_ENV}={env!r} is not a positive integer") from err
    return 1


def _seed(args, default: int = 0) -> int:
    if args.seed is None:
        if os.environ.get(CI_ENV):
            raise CommandError(f"--seed is required when {CI_ENV} is set")
        return default
    return args.seed


def _emit_csv(rows: list[dict], out: str | None) -> None:
    if not rows:
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if out:
        Path(out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


def _truth_doc(name: str, truth: BiclusterTruth, means: dict[int, float]) -> dict:
    return {**truth.to_dict(), "class_means": {str(k): v for k, v in means.items()}, "name": name}


def _truth_from_doc(d: dict) -> BiclusterTruth:
    means = {int(k): float(v) for k, v in d["class_means"].items()}
    t = BiclusterTruth.from_dict(d, np.zeros(0))
    t.cell_means = np.vectorize(means.get, otypes=[float])(t.atom_labels())
    return t


def _load_truths(path: str) -> dict[str, BiclusterTruth]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return {name: _truth_from_doc(d) for name, d in doc["datasets"].items()}
    except (OSError, KeyError, TypeError, ValueError) as err:
        raise CommandError(f"cannot read truth file {path}: {err}") from err


def _truth_for(name: str, truths: dict[str, BiclusterTruth]) -> BiclusterTruth:
    parts = name.split("+")
    missing = [p for p in parts if p not in truths]
    if missing:
        raise CommandError(f"no truth for dataset(s) {missing}")
    return truths[name] if len(parts) == 1 else stack_truths([truths[p] for p in parts])


def _hyper(args, doc: dict) -> Hyperparameters:
    """Flags override manifest values, which override defaults."""
    kw = dict(doc.get("hyperparameters", {}))
    h = Hyperparameters.from_dict(kw) if kw else Hyperparameters()
    upd = h.to_dict()
    for flag, key in (("K", "K"), ("L", "L"), ("b0", "b0"), ("a_alpha", "a_alpha"), ("b_alpha", "b_alpha")):
        v = getattr(args, flag)
        if v is not None:
            upd[key] = v
    if args.beta is not None:
        upd["beta"] = str(args.beta)
    if args.nig:
        upd["nig"] = [[p.m0, p.k0, p.c0, p.d0] for p in args.nig]
    return Hyperparameters.from_dict(upd)


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(args)
    entries, truths = [], {}
    if args.design == "peaks":
        y, grid, truth = gen_peaks_scenario(seed, n_rows=args.rows or 500)
        name = "peaks"
        write_matrix_csv(out / f"{name}.csv", y)
        entries.append({"name": name, "path": f"{name}.csv", "transform": False})
        truths[name] = _truth_doc(name, truth, PEAK_MEANS)
        hyper = {"K": 10, "L": 10, "beta": "fixed:1.0"}
    else:
        means = tuple(args.means) if args.means else NOISY_MEANS
        grid = noisy_grid()
        for r, (y, truth) in enumerate(gen_noisy_collection(seed, means, n_rows=args.rows or 50)):
            write_matrix_csv(out / f"{y.name}.csv", y)
            entries.append({"name": y.name, "path": f"{y.name}.csv", "transform": False})
            truths[y.name] = _truth_doc(y.name, truth, {0: 0.0, SIGNAL: float(means[r])})
        hyper = {"K": 15, "L": 30, "beta": "fixed:0.0"}
    write_grid_csv(out / "grid.csv", grid)
    (out / "truth.json").write_text(
        json.dumps({"design": args.design, "seed": seed, "datasets": truths}, indent=1), encoding="utf-8")
    manifest = out / "manifest.json"
    write_manifest(manifest, entries, "grid.csv", design=args.design, seed=seed, hyperparameters=hyper)
    print(manifest)
    return 0


def cmd_fit(args) -> int:
    coll, doc = load_manifest(args.manifest, names=args.datasets, stack=args.stack)
    h = _hyper(args, doc)
    seed = _seed(args)
    fit = run_cavi(coll, h, n_starts=args.starts, tol=args.tol, max_iters=args.max_iters, seed=seed,
                   n_jobs=_threads(args), init=args.init)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = fit.to_dict()
    payload["source"] = {"manifest": str(Path(args.manifest).resolve()),
                         "selected": args.datasets or [e["name"] for e in doc["datasets"]],
                         "stack": bool(args.stack), "init": args.init}
    (out / "fit.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")
    ids = doc["pixel_ids"]
    with open(out / "segmentation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pixel_id", "x", "y", "cc_label"])
        for j, (x, y) in enumerate(coll.grid.coords):
            w.writerow([ids[j], int(x), int(y), int(fit.partitions.column_labels[j])])
    print(f"final ELBO {fit.final_elbo:.6f} (start seed {fit.seed}, {fit.n_iters} sweeps, "
          f"converged={fit.converged}, beta_bar={fit.state.beta_bar})")
    return 0


def _partition_from_fit(doc: dict) -> PartitionEstimate:
    try:
        cols = np.asarray(doc["column_labels"], dtype=int)
        occ = tuple(int(k) for k in doc["occupied_ccs"])
        rows = {(t, int(k)): np.asarray(v, dtype=int)
                for t, per in enumerate(doc["row_labels"]) for k, v in per.items()}
    except (KeyError, TypeError, ValueError) as err:
        raise CommandError(f"fit file does not match the FitResult schema: {err}") from err
    return PartitionEstimate(cols, rows, occ)


def cmd_evaluate(args) -> int:
    try:
        doc = json.loads(Path(args.fit).read_text(encoding="utf-8"))
    except (OSError, ValueError) as err:
        raise CommandError(f"cannot read fit file {args.fit}: {err}") from err
    part = _partition_from_fit(doc)
    truths = _load_truths(args.truth)
    src = doc.get("source", {})
    manifest = args.manifest or src.get("manifest")
    if not manifest:
        raise CommandError("no manifest given and none recorded in the fit file")
    coll, _ = load_manifest(manifest, names=src.get("selected"), stack=bool(src.get("stack")))
    if len(part.row_labels) and max(t for t, _ in part.row_labels) + 1 != coll.T:
        raise CommandError("fit and manifest selection disagree on the number of datasets")
    rows = []
    for t, d in enumerate(coll.datasets):
        truth = _truth_for(d.name, truths)
        if truth.cell_means.shape != d.values.shape:
            raise CommandError(f"truth and data shapes differ for {d.name}")
        rows.append({"dataset": d.name, **score(truth, d.values, part, t)})
    _emit_csv(rows, args.out)
    return 0


def cmd_baseline(args) -> int:
    coll, doc = load_manifest(args.manifest, names=args.datasets)
    truths = _load_truths(args.truth)
    seed = _seed(args)
    rows = []
    for d in coll.datasets:
        part = double_kmeans(d, k_max=args.k_max, l_max=args.l_max, seed=seed)
        rows.append({"dataset": d.name, **score(_truth_for(d.name, truths), d.values, part, 0)})
    _emit_csv(rows, args.out)
    return 0


def cmd_coclust(args) -> int:
    variants = ("shared", "common") if args.variant == "both" else (args.variant,)
    rows = []
    for v in variants:
        if v == "shared":
            for b0 in args.b0:
                for L in args.L:
                    rows.extend(coclust_table(args.alpha, args.beta, v, b0=b0, L=int(L)))
        else:
            for nu in args.nu:
                rows.extend(coclust_table(args.alpha, args.beta, v, nu=nu))
    _emit_csv(rows, args.out)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poseidon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic design to a directory")
    s.add_argument("--design", choices=("peaks", "noisy"), required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--rows", type=_positive_int, help="rows per dataset (design default otherwise)")
    s.add_argument("--means", type=_float_list, help="noisy design: comma-separated signal means for D0..")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="multi-start CAVI on a manifest")
    f.add_argument("--manifest", required=True)
    f.add_argument("--datasets", nargs="+", help="subset of manifest dataset names")
    f.add_argument("--stack", action="store_true", help="row-stack the selected datasets")
    f.add_argument("--K", type=_positive_int)
    f.add_argument("--L", type=_positive_int)
    f.add_argument("--beta", type=_beta, help="fixed:<value> or grid:<bound>:<points>")
    f.add_argument("--nig", type=_nig, action="append", help="m0,k0,c0,d0 (repeat per dataset)")
    f.add_argument("--b0", type=_positive_float)
    f.add_argument("--a-alpha", dest="a_alpha", type=_positive_float)
    f.add_argument("--b-alpha", dest="b_alpha", type=_positive_float)
    f.add_argument("--starts", type=_positive_int, default=50)
    f.add_argument("--tol", type=_positive_float, default=1e-5)
    f.add_argument("--max-iters", dest="max_iters", type=_positive_int, default=500)
    f.add_argument("--init", choices=("mixed", "kmeans", "softmax"), default="mixed",
                   help="starting-point scheme; mixed alternates kmeans and softmax starts")
    f.add_argument("--seed", type=int)
    f.add_argument("--threads", type=_positive_int)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="score a fit against simulated truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--fit", required=True)
    e.add_argument("--manifest", help="defaults to the manifest recorded in the fit")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("baseline", help="double k-means, scored against simulated truth")
    b.add_argument("--manifest", required=True)
    b.add_argument("--truth", required=True)
    b.add_argument("--datasets", nargs="+")
    b.add_argument("--k-max", dest="k_max", type=_positive_int, default=10)
    b.add_argument("--l-max", dest="l_max", type=_positive_int, default=10)
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("coclust", help="prior coclustering probabilities over a grid")
    c.add_argument("--alpha", type=_float_list, required=True)
    c.add_argument("--beta", type=_float_list, required=True)
    c.add_argument("--variant", choices=("shared", "common", "both"), default="both")
    c.add_argument("--b0", type=_float_list, default=[1.0])
    c.add_argument("--L", type=_float_list, default=[2.0])
    c.add_argument("--nu", type=_float_list, default=[1.0])
    c.add_argument("--out")
    c.set_defaults(func=cmd_coclust)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ValueError, OSError, RuntimeError) as err:
        print(f"poseidon {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
