"""Operator command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand
honors --seed; EMLABEL_STATE_DIR provides the default --state-dir.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import (
    __version__,
    category_taxonomy_path,
    materials_taxonomy_path,
)
from .datastore import DEFAULT_SEED, LabelStore, dedup_catalog, ingest_catalog
from .errors import EmlabelError
from . import metrics as metrics_mod

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _slice_arg(text: str):
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected OFFSET:END, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="emlabel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"emlabel {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p, state_dir=False):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="RNG seed (fixed default for reproducibility)")
        if state_dir:
            p.add_argument(
                "--state-dir",
                default=os.environ.get("EMLABEL_STATE_DIR", "./emlabel-state"),
                help="labeling state directory (default: $EMLABEL_STATE_DIR or ./emlabel-state)",
            )

    p = sub.add_parser("ingest", help="load and validate a catalog file")
    p.add_argument("--catalog", required=True, help="line-delimited catalog file")
    p.add_argument("--dim", type=int, required=True, help="expected embedding dimension")
    p.add_argument("--image-slice", type=_slice_arg, help="image-embedding slice OFFSET:END")
    p.add_argument("--text-slice", type=_slice_arg, help="text-embedding slice OFFSET:END")
    common(p)

    p = sub.add_parser("dedup", help="drop near-duplicate records, keeping the best-annotated")
    p.add_argument("--catalog", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--image-slice", type=_slice_arg, required=True)
    p.add_argument("--text-slice", type=_slice_arg, required=True)
    p.add_argument("--image-eps", type=float, required=True, help="image distance threshold")
    p.add_argument("--text-eps", type=float, required=True, help="text distance threshold")
    p.add_argument("--out", required=True, help="output catalog path")
    common(p)

    p = sub.add_parser("embed", help="train or apply the bottleneck object embedding")
    p.add_argument("--catalog", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--model", required=True, help="model file to write (train) or read (apply)")
    p.add_argument("--apply", action="store_true", help="encode objects with an existing model")
    p.add_argument("--out", help="output path for encoded embeddings (apply)")
    p.add_argument("--bottleneck", type=int, default=32)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--lr-start", type=float, default=3e-3)
    p.add_argument("--lr-end", type=float, default=3e-7)
    p.add_argument("--activation", choices=["LINEAR", "SMOOTH_SATURATING"], default="LINEAR")
    p.add_argument("--materials-tax", default=None, help="materials taxonomy file (default: bundled sample)")
    p.add_argument("--category-tax", default=None, help="category taxonomy file (default: bundled sample)")
    common(p)

    p = sub.add_parser("impute", help="EM-style fill-in of missing attributes")
    p.add_argument("--catalog", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--generations", type=int, default=2)
    p.add_argument("--out-catalog", help="write the filled catalog here")
    p.add_argument("--report", help="write the machine-readable metrics report here")
    p.add_argument("--materials-tax", default=None)
    p.add_argument("--category-tax", default=None)
    common(p)

    p = sub.add_parser("serve", help="run the labeling HTTP service")
    p.add_argument("--catalog", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    common(p, state_dir=True)

    p = sub.add_parser("simulate", help="run the synthetic labeling protocol")
    p.add_argument("--budget", type=int, default=1200, help="oracle label budget")
    p.add_argument("--strategy", choices=["smart", "random"], default="smart")
    p.add_argument("--objects", type=int, default=100_000)
    p.add_argument("--embedding-dim", type=int, default=64)
    p.add_argument("--prevalence", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--abstain-band", type=float, default=0.05)
    p.add_argument("--out", help="metrics file (JSON)")
    common(p)

    p = sub.add_parser("evaluate", help="score prediction files against truth files")
    p.add_argument("--pred", required=True, help="TSV of id<TAB>value")
    p.add_argument("--truth", required=True, help="TSV of id<TAB>value")
    p.add_argument("--metric", choices=["mnre", "alde", "prf", "kl"], required=True)
    p.add_argument("--threshold", type=float, default=0.5, help="binarization threshold for prf")
    p.add_argument("--out", help="machine-readable report path (JSON)")
    common(p)

    p = sub.add_parser("export", help="export probabilistic labels for every object")
    p.add_argument("--catalog", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--project", required=True)
    p.add_argument("--out", required=True)
    common(p, state_dir=True)

    p = sub.add_parser("taxonomy-check", help="validate a taxonomy file")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--match", help="optionally run a materials string through the matcher")
    p.add_argument("--catalog", help="cross-check every record's category_path against the tree")
    p.add_argument("--dim", type=int, help="embedding dimension for --catalog")
    common(p)

    return parser


def _load_taxonomies(args):
    from . import taxonomy as tax_mod

    mat = tax_mod.load_taxonomy(args.materials_tax or materials_taxonomy_path())
    cat = tax_mod.load_taxonomy(args.category_tax or category_taxonomy_path())
    return mat, cat


def _cmd_ingest(args) -> int:
    res = ingest_catalog(args.catalog, args.dim, image_slice=args.image_slice, text_slice=args.text_slice)
    print(f"loaded {res.count} records ({len(res.rejected)} rejected)")
    for lineno, reason in res.rejected:
        print(f"  line {lineno}: {reason}", file=sys.stderr)
    return EXIT_OK


def _cmd_dedup(args) -> int:
    res = ingest_catalog(args.catalog, args.dim, image_slice=args.image_slice, text_slice=args.text_slice)
    deduped = dedup_catalog(res.catalog, args.image_eps, args.text_eps)
    deduped.write(args.out)
    print(f"kept {len(deduped)} of {res.count} records -> {args.out}")
    return EXIT_OK


def _attribute_matrix(catalog, mat, cat):
    """Attribute-complete input matrix + layout for the autoencoder."""
    from . import imputer
    from .embedder import FeatureLayout
    from .errors import FailedPrecondition

    features = imputer.build_features(catalog, mat, cat)
    for target in imputer.TARGETS:
        missing = np.nonzero(~features.present[target])[0]
        if len(missing):
            oid = catalog.ids[missing[0]]
            raise FailedPrecondition(
                f"object {oid!r} is missing un-imputed slice "
                f"{imputer._BLOCK_FOR_TARGET[target]!r}; run `emlabel impute` first"
            )
    blocks = [features.blocks[name] for name in imputer._INPUT_ORDER]
    layout = FeatureLayout.from_lengths(
        [(name, features.blocks[name].shape[1]) for name in imputer._INPUT_ORDER]
    )
    return np.hstack(blocks), layout


def _cmd_embed(args) -> int:
    from . import embedder

    mat, cat = _load_taxonomies(args)
    res = ingest_catalog(args.catalog, args.dim)
    X, layout = _attribute_matrix(res.catalog, mat, cat)
    if args.apply:
        model, _ = embedder.load_autoencoder(args.model)
        codes = embedder.encode(X, model)
        out = args.out or "embeddings.tsv"
        with open(out, "w", encoding="utf-8") as f:
            for oid, row in zip(res.catalog.ids, codes):
                f.write(oid + "\t" + json.dumps([float(x) for x in row]) + "\n")
        print(f"encoded {len(codes)} objects -> {out}")
        return EXIT_OK
    cfg = embedder.TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr_start=args.lr_start,
        lr_end=args.lr_end,
        seed=args.seed,
    )
    model = embedder.train_autoencoder(X, args.bottleneck, cfg, activation=args.activation)
    embedder.save_autoencoder(model, args.model, layout=layout)
    print(
        f"trained bottleneck={args.bottleneck} final_loss={model.final_loss:.6g} "
        f"rms={model.rms:.4f} -> {args.model}"
    )
    return EXIT_OK


def _cmd_impute(args) -> int:
    from . import imputer

    mat, cat = _load_taxonomies(args)
    res = ingest_catalog(args.catalog, args.dim)
    report, filled = imputer.run_em(
        res.catalog, mat, cat, generations=args.generations, seed=args.seed
    )
    for g, losses in enumerate(report.generations, start=1):
        line = " ".join(
            f"{t}={losses[t]:.4f}" if losses.get(t) is not None else f"{t}=skipped"
            for t in imputer.TARGETS
        )
        print(f"generation {g}: {line}")
    if args.out_catalog:
        filled.write(args.out_catalog)
        print(f"filled catalog -> {args.out_catalog}")
    if args.report:
        payload = {
            "generations": report.generations,
            "val_rows": report.val_rows,
            "improved_heads": report.improved_counts(),
        }
        Path(args.report).write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")
        print(f"report -> {args.report}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.catalog, args.state_dir, args.dim, host=args.host, port=args.port)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from .simharness import SyntheticSpec, run_protocol

    spec = SyntheticSpec(
        n_objects=args.objects,
        embedding_dim=args.embedding_dim,
        prevalence=args.prevalence,
        label_noise=args.noise,
        abstain_band=args.abstain_band,
        seed=args.seed,
    )
    result = run_protocol(spec, budget=args.budget, strategy=args.strategy.upper())
    print(result.summary_table())
    if args.out:
        Path(args.out).write_text(
            json.dumps(result.to_json(), sort_keys=True, indent=2), encoding="utf-8"
        )
        print(f"metrics -> {args.out}")
    return EXIT_OK


def _read_tsv(path):
    rows = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise EvalDataError(f"{path}:{lineno}: expected id<TAB>value")
            rows[parts[0]] = (lineno, parts[1:])
    return rows


class EvalDataError(EmlabelError):
    code = "data_error"


def _cmd_evaluate(args) -> int:
    pred = _read_tsv(args.pred)
    truth = _read_tsv(args.truth)
    ids = sorted(set(pred) & set(truth))
    if not ids:
        raise EvalDataError("no overlapping ids between pred and truth")
    report: dict = {"metric": args.metric, "count": len(ids)}
    if args.metric in ("mnre", "alde"):
        fn = metrics_mod.mnre if args.metric == "mnre" else metrics_mod.alde
        vals = []
        for oid in ids:
            for path, cells in (( args.pred, pred[oid]), (args.truth, truth[oid])):
                v = float(cells[1][0])
                if v <= 0:
                    raise EvalDataError(f"{path}:{cells[0]}: non-positive value {v} for id {oid!r}")
            vals.append(fn(float(pred[oid][1][0]), float(truth[oid][1][0])))
        report["mean"] = float(np.mean(vals))
        report["median"] = float(np.median(vals))
        print(f"{args.metric}: mean={report['mean']:.4f} median={report['median']:.4f} over {len(ids)} items")
    elif args.metric == "prf":
        tp = fp = fn_ = tn = 0
        for oid in ids:
            p = float(pred[oid][1][0]) >= args.threshold
            t = truth[oid][1][0].strip() in ("1", "1.0", "POSITIVE", "true", "True")
            tp += p and t
            fp += p and not t
            fn_ += (not p) and t
            tn += (not p) and (not t)
        prf = metrics_mod.binary_prf(tp, fp, fn_, tn)
        report.update(
            tp=tp, fp=fp, fn=fn_, tn=tn,
            precision=prf.precision, recall=prf.recall, f1=prf.f1, accuracy=prf.accuracy,
        )
        fmt = lambda x: "undefined" if x is None else f"{x:.4f}"
        print(
            f"precision={fmt(prf.precision)} recall={fmt(prf.recall)} "
            f"f1={fmt(prf.f1)} accuracy={fmt(prf.accuracy)}"
        )
    elif args.metric == "kl":
        batch = []
        for oid in ids:
            tcells, pcells = truth[oid][1], pred[oid][1]
            tprobs = [float(x) for x in tcells[0].split(",")]
            n_reviews = int(tcells[1]) if len(tcells) > 1 else 0
            pprobs = [float(x) for x in pcells[0].split(",")]
            batch.append(
                (
                    metrics_mod.RatingsDistribution(np.asarray(tprobs), n_reviews),
                    metrics_mod.RatingsDistribution(
                        np.asarray(pprobs) / max(sum(pprobs), 1e-12), 0
                    ),
                )
            )
        report["weighted_mean_kl"] = metrics_mod.weighted_mean_kl(batch)
        print(f"weighted mean KL = {report['weighted_mean_kl']:.4f} over {len(ids)} items")
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=2), encoding="utf-8")
    return EXIT_OK


def _cmd_export(args) -> int:
    res = ingest_catalog(args.catalog, args.dim)
    store = LabelStore(res.catalog, state_dir=args.state_dir)
    try:
        count = store.export_labels(args.project, args.out)
    finally:
        store.close()
    print(f"exported {count} lines -> {args.out}")
    return EXIT_OK


def _cmd_taxonomy_check(args) -> int:
    from . import taxonomy as tax_mod

    tax = tax_mod.load_taxonomy(args.taxonomy)
    print(f"ok: {len(tax)} nodes, root {tax.root!r}, max depth {tax.max_depth()}")
    if args.match:
        result = tax_mod.match_material_string(args.match, tax)
        print(f"match {args.match!r}: nodes={result.nodes} unmatched={result.unmatched}")
    if args.catalog:
        if not args.dim:
            raise EvalDataError("--catalog requires --dim")
        res = ingest_catalog(args.catalog, args.dim)
        bad = [
            rec.id
            for rec in res.catalog
            if rec.category_path is not None and not tax.is_valid_path(rec.category_path)
        ]
        if bad:
            raise EvalDataError(f"invalid category_path on record(s): {bad[:10]}")
        print(f"category paths valid on all {res.count} records")
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "dedup": _cmd_dedup,
    "embed": _cmd_embed,
    "impute": _cmd_impute,
    "serve": _cmd_serve,
    "simulate": _cmd_simulate,
    "evaluate": _cmd_evaluate,
    "export": _cmd_export,
    "taxonomy-check": _cmd_taxonomy_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except EmlabelError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
