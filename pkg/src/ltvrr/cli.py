"""Command-line front end: ``ltvrr <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import embedmodel as em
from . import semsim
from .losses import LossConfig
from .metrics import (BAND_NAMES, DEFAULT_CUTOFFS, PREDICTIONS_SCHEMA, band_report, band_table_csv,
                      grouped_pair_accuracy, per_class_accuracy, per_example_accuracy,
                      read_predictions, soft_ap, soft_ap_csv, top1, gold, triplet_accuracy,
                      write_predictions)
from .relmix import RelMixConfig
from .synthgen import GenConfig, ROLES, generate_dataset, load_data_dir, save_world
from .trainer import TrainConfig, evaluate, gradcheck, train, triplet_counts
from .vocab import ENTITY, RELATION, FrequencyBands, load_vocab, split_bands

log = logging.getLogger("ltvrr")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
EVAL_SCHEMA = 1
GAMMA_GRID = (0.0, 0.1, 1.0, 10.0, 100.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _manifest(out: Path, command: str, args: argparse.Namespace, **extra) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    # default=str renders paths, including those nested in list-valued flags
    _write(out / "manifest.json", json.dumps(
        {"command": command, "version": __version__, "flags": flags, **extra},
        indent=2, sort_keys=True, default=str) + "\n")


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    return path


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(args):
    config = GenConfig(k_ent=args.k_ent, k_rel=args.k_rel, zipf_s=args.zipf, d_in=args.d_in,
                       noise_sigma=args.sigma, n_train=args.n_train, n_val=args.n_val,
                       n_test=args.n_test, scenes_per_image=args.scenes_per_image, seed=args.seed,
                       rel_noise=args.rel_noise, test_zipf_s=args.test_zipf)
    world = generate_dataset(config)
    save_world(world, args.out)
    _manifest(args.out, "gen-data", args, config=asdict(config))
    bands = split_bands(world.ent_vocab), split_bands(world.rel_vocab)
    print(f"wrote {len(world.train)}/{len(world.val)}/{len(world.test)} train/val/test triplets "
          f"to {args.out}; entity bands {bands[0].sizes()}, relation bands {bands[1].sizes()}")


# -- train ------------------------------------------------------------------

def _word_vectors(data_dir: Path, vocab):
    path = data_dir / f"{vocab.branch}_embeddings.txt"
    vectors = semsim.load_embeddings(_need(path))
    missing = [lab for lab in vocab.labels if lab not in vectors]
    if missing:
        raise ValueError(f"{path}: no word vector for {missing[0]!r}")
    return np.stack([vectors[lab] for lab in vocab.labels])


def _loss_config(args) -> LossConfig:
    kind = {"softmax": "triplet_softmax", "vilhub": "triplet_softmax",
            "weighted": "weighted", "focal": "focal"}[args.loss]
    gamma = args.gamma
    if gamma is None:
        gamma = 1.0 if args.loss == "vilhub" else 0.0
    return LossConfig(kind=kind, gamma_vilhub=gamma, gamma_focal=args.focal_gamma)


def _train_config(args) -> TrainConfig:
    if args.config:
        return TrainConfig.from_dict(json.loads(_need(args.config).read_text()))
    relmix = None
    if args.relmix:
        relmix = RelMixConfig(lambda_min=args.lambda_min, lambda_max=args.lambda_max,
                              alpha_p=args.alpha_p, eta=args.eta, seed=args.seed,
                              band_role=args.relmix_band, same_scene=not args.global_mix)
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       loss=_loss_config(args), relmix=relmix, seed=args.seed,
                       eval_every=args.eval_every, momentum=args.momentum, hidden=args.hidden,
                       lang_mode=args.lang_mode, normalize=args.normalize)


def _fit(data, config: TrainConfig):
    return train(data.splits["train"], data.ent_vocab, data.rel_vocab, config,
                 _word_vectors(data.path, data.ent_vocab), _word_vectors(data.path, data.rel_vocab),
                 val_data=data.splits.get("val"))


def cmd_train(args):
    config = _train_config(args)
    data = load_data_dir(_need(args.data), splits=("train", "val"))
    params, history = _fit(data, config)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    em.save_checkpoint(params, out / "model.ckpt", {"train": config.to_dict()})
    _write(out / "train.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    _write(out / "history.csv", history.to_csv())
    _manifest(out, "train", args, train=config.to_dict(), data=str(args.data))
    last = history.epoch_totals()[-1]
    print(f"trained {config.epochs} epochs; final train loss {last:.5f}; model in {out}")


# -- eval / report ----------------------------------------------------------

def _labels(ent, rel):
    return {"s": ent.labels, "r": rel.labels, "o": ent.labels}


def compute_report(records, meta: dict) -> dict:
    """Band, triplet and per-example tables from prediction records and eval metadata."""
    sizes = {"s": len(meta["labels"]["s"]), "r": len(meta["labels"]["r"]), "o": len(meta["labels"]["o"])}
    bands = {r: FrequencyBands(*(meta["bands"][r][b] for b in ("many", "medium", "few")),
                               num_classes=sizes[r]) for r in ROLES}
    rows, per_example = {}, {}
    for r in ROLES:
        acc = per_class_accuracy(top1(records, r), gold(records, r), sizes[r])
        rows[r] = band_report(acc, bands[r])
        per_example[r] = per_example_accuracy(top1(records, r), gold(records, r))
    overall, trip_bands = triplet_accuracy(records, meta.get("train_triplet_counts"))
    triplets = {"accuracy": overall, **{f"pairs_{g}": grouped_pair_accuracy(records, g)
                                        for g in ("SO", "SR", "OR")}}
    if trip_bands:
        triplets.update({f"band_{k}": v for k, v in trip_bands.items()})
    return {"bands": rows, "per_example": per_example, "triplets": triplets}


def _report_files(report: dict, out: Path, fmt: str) -> None:
    if fmt == "json":
        _write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
        return
    _write(out / "report.csv", band_table_csv(report["bands"]))
    lines = ["metric,value"]
    lines += [f"per_example_{r},{report['per_example'][r]:.4f}" for r in ROLES]
    for k, v in report["triplets"].items():
        lines.append(f"triplet_{k},{'NA' if v is None else f'{v:.4f}'}")
    _write(out / "summary.csv", "\n".join(lines) + "\n")


def cmd_eval(args):
    params = em.load_checkpoint(_need(Path(args.model) / "model.ckpt"))
    data = load_data_dir(_need(args.data), splits=("train", args.split))
    ent, rel = data.ent_vocab, data.rel_vocab
    counts = triplet_counts(data.splits["train"])
    result = evaluate(params, data.splits[args.split], ent, rel, pool=args.pool, records=True)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(result["records"], out / "predictions.jsonl", _labels(ent, rel))
    bands = {"s": split_bands(ent), "o": split_bands(ent), "r": split_bands(rel)}
    meta = {
        "schema": EVAL_SCHEMA, "predictions_schema": PREDICTIONS_SCHEMA, "split": args.split,
        "labels": {r: list(v) for r, v in _labels(ent, rel).items()},
        "bands": {r: {name: list(idx) for name, idx in b.items()} for r, b in bands.items()},
        "train_triplet_counts": counts,
    }
    _write(out / "eval.json", json.dumps(meta, sort_keys=True) + "\n")
    report = compute_report(result["records"], meta)
    _report_files(report, out, args.format)
    _manifest(out, "eval", args)
    print(band_table_csv(report["bands"]), end="")


def _load_eval(path: Path):
    meta = json.loads(_need(path / "eval.json").read_text())
    if meta.get("schema") != EVAL_SCHEMA:
        raise ValueError(f"{path}/eval.json: unsupported schema {meta.get('schema')}")
    records = read_predictions(_need(path / "predictions.jsonl"), meta["labels"])
    return records, meta


def cmd_report(args):
    records, meta = _load_eval(args.eval)
    report = compute_report(records, meta)
    out = args.out
    _report_files(report, out, args.format)
    if args.simmat:
        if args.T is None:
            raise UsageError("--T is required when --simmat is given")
        results = {}
        for path in args.simmat:
            matrix = semsim.SimilarityMatrix.load(_need(path))
            labels = meta["labels"]["r"] if set(matrix.labels) >= set(meta["labels"]["r"]) \
                and not set(matrix.labels) >= set(meta["labels"]["s"]) else meta["labels"]["s"]
            roles = ("r",) if labels is meta["labels"]["r"] else ("s", "o")
            matrix = matrix.reindex(labels)
            pool = min(len(rec.rank[roles[0]]) for rec in records)
            cutoffs = [k for k in args.cutoffs if k <= pool]
            results[matrix.metric_name] = soft_ap(records, matrix.sim, args.T, cutoffs, roles)
        if args.format == "json":
            _write(out / "soft_ap.json", json.dumps(
                {m: {str(k): v for k, v in r.items()} for m, r in results.items()}, indent=2) + "\n")
        else:
            _write(out / "soft_ap.csv", soft_ap_csv(results))
    _manifest(out, "report", args)
    print(band_table_csv(report["bands"]), end="")


# -- simmat -----------------------------------------------------------------

def cmd_simmat(args):
    vocab = load_vocab(_need(args.vocab), args.branch)
    sources = [args.taxonomy, args.embeddings, args.precomputed]
    if sum(s is not None for s in sources) != 1:
        raise UsageError("give exactly one of --taxonomy, --embeddings, --precomputed")
    if args.taxonomy is not None:
        if args.metric is None:
            raise UsageError("--metric is required with --taxonomy")
        ic = semsim.load_ic(_need(args.ic)) if args.ic else None
        source = semsim.TaxonomySource(semsim.Taxonomy.load(_need(args.taxonomy)), args.metric, ic)
    elif args.embeddings is not None:
        source = semsim.EmbeddingSource(semsim.load_embeddings(_need(args.embeddings)))
    else:
        source = semsim.SimilarityMatrix.load(_need(args.precomputed))
    matrix = semsim.build_similarity_matrix(vocab.labels, source)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    name = f"{args.branch}_{matrix.metric_name}"
    if args.matrix_format == "raw":
        matrix.save_raw(out / f"{name}.bin")
    else:
        matrix.save_csv(out / f"{name}.csv")
    _manifest(out, "simmat", args)
    print(f"wrote {len(vocab)}x{len(vocab)} {matrix.metric_name} matrix to {out}")


# -- gradcheck --------------------------------------------------------------

def cmd_gradcheck(args):
    loss = _loss_config(args)
    report = gradcheck(loss, args.trials, soft_targets=args.soft_targets, hidden=args.hidden,
                       lang_mode=args.lang_mode, normalize=args.normalize, seed=args.seed)
    status = "ok" if report.max_rel_error < args.tol else "FAILED"
    print(f"gradcheck {args.loss} gamma={loss.gamma_vilhub} trials={args.trials}: "
          f"max rel err {report.max_rel_error:.3e} ({status}, tol {args.tol:g})")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        _manifest(args.out, "gradcheck", args, max_rel_error=report.max_rel_error)
    return EXIT_OK if status == "ok" else EXIT_USER


# -- sweep ------------------------------------------------------------------

def cmd_sweep(args):
    data = load_data_dir(_need(args.data))
    base = _train_config(args)
    rows = ["gamma,split,branch," + ",".join(BAND_NAMES)]
    for gamma in args.gammas:
        config = TrainConfig.from_dict({**base.to_dict(),
                                        "loss": {**asdict(base.loss), "gamma_vilhub": gamma}})
        params, _ = _fit(data, config)
        for split in ("val", "test"):
            result = evaluate(params, data.splits[split], data.ent_vocab, data.rel_vocab, pool=1)
            for r in ROLES:
                rep = result["bands"][r]
                rows.append(f"{gamma:g},{split},{r}," + ",".join(
                    "NA" if rep[b] is None else f"{rep[b]:.4f}" for b in BAND_NAMES))
        log.info("gamma %g done", gamma)
    text = "\n".join(rows) + "\n"
    if args.format == "json":
        keys = rows[0].split(",")
        _write(args.out / "sweep.json", json.dumps([dict(zip(keys, r.split(","))) for r in rows[1:]],
                                                  indent=2) + "\n")
    else:
        _write(args.out / "sweep.csv", text)
    _manifest(args.out, "sweep", args)
    print(text, end="")


# -- parser -----------------------------------------------------------------

def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _common(p, out_required=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=out_required)
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _loss_flags(p):
    p.add_argument("--loss", choices=("softmax", "weighted", "focal", "vilhub"), default="softmax")
    p.add_argument("--gamma", type=float, default=None,
                   help="VilHub scale (default 1.0 for --loss vilhub, else 0)")
    p.add_argument("--focal-gamma", type=float, default=2.0)
    p.add_argument("--hidden", type=int, default=0)
    p.add_argument("--lang-mode", choices=("copy", "affine"), default="copy")
    p.add_argument("--normalize", action="store_true")


def _train_flags(p):
    _loss_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, help="train.json overriding the flags below")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--relmix", action="store_true")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--lambda-min", type=float, default=0.7)
    p.add_argument("--lambda-max", type=float, default=0.8)
    p.add_argument("--alpha-p", type=float, default=0.5)
    p.add_argument("--relmix-band", choices=ROLES, default="r")
    p.add_argument("--global-mix", action="store_true", help="ignore scene ids when mixing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ltvrr", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic long-tail dataset")
    _common(p)
    p.add_argument("--k-ent", type=int, default=100)
    p.add_argument("--k-rel", type=int, default=30)
    p.add_argument("--zipf", type=float, default=1.5)
    p.add_argument("--d-in", type=int, default=32)
    p.add_argument("--sigma", type=float, default=0.35)
    p.add_argument("--n-train", type=int, default=20000)
    p.add_argument("--n-val", type=int, default=4000)
    p.add_argument("--n-test", type=int, default=4000)
    p.add_argument("--scenes-per-image", type=float, default=8.0)
    p.add_argument("--rel-noise", type=float, default=0.1)
    p.add_argument("--test-zipf", type=float, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and write predictions and band tables")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--pool", type=int, default=250)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tables from eval output, optionally soft AP")
    _common(p)
    p.add_argument("--eval", type=Path, required=True)
    p.add_argument("--simmat", type=Path, nargs="*", default=[])
    p.add_argument("--T", type=int, default=None, help="extra relevant labels per example")
    p.add_argument("--cutoffs", type=_ints, default=list(DEFAULT_CUTOFFS))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simmat", help="build a class similarity matrix")
    _common(p)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--branch", choices=(ENTITY, RELATION), default=ENTITY)
    p.add_argument("--taxonomy", type=Path)
    p.add_argument("--ic", type=Path)
    p.add_argument("--metric", choices=semsim.TAXONOMY_METRICS)
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--precomputed", type=Path)
    p.add_argument("--matrix-format", choices=("csv", "raw"), default="csv")
    p.set_defaults(func=cmd_simmat)

    p = sub.add_parser("gradcheck", help="finite-difference check of parameter gradients")
    _common(p, out_required=False)
    _loss_flags(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--soft-targets", action="store_true")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train over a VilHub scale grid")
    _common(p)
    _train_flags(p)
    p.add_argument("--gammas", type=_floats, default=list(GAMMA_GRID))
    p.set_defaults(func=cmd_sweep)
    return parser


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USER, "usage", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USER, "usage", str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_USER, "missing_file", f"no such file: {exc.filename or exc.args[0]}")
    except (ValueError, KeyError) as exc:
        return _fail(EXIT_USER, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        return _fail(EXIT_INTERNAL, type(exc).__name__, str(exc))
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
