"""Command-line surface tying the pipeline together.

Subcommands: gen | train | eval | dist | bound | baseline.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

Every emitted report (history/metrics CSVs, bundles, manifests) embeds
the resolved config hash, the seeds, and the build version, so a run is
reproducible from its artifacts alone. With --threads 1 (the default)
reruns are byte-identical; more threads void the determinism guarantee.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, LotnnError, NumericError
from .classify import (
    ClassifierConfig,
    TrainSchedule,
    embed_test_cloud,
    evaluate,
    predict_resampled,
    score,
    train_alternating,
)
from .data import (
    LabeledDataset,
    SyntheticSpec,
    gen_synthetic,
    load_csv_dir,
    save_csv_dir,
    split,
)
from .deepsets import DeepSetsConfig, ds_bagging, ds_forward, ds_train
from .lot import BoundParams, EmbeddingSet, ReferenceMeasure, pairwise_matrix, theorem_bound
from .bundle import ModelBundle, load_bundle, save_bundle
from .otsolve import SolverConfig


@dataclass(frozen=True)
class RunConfig:
    """Every tunable in one serializable record."""

    seed: int = 0
    threads: int = 1
    reference: str = "fitted"          # fitted | standard | box
    box_halfwidth: float = 1.0
    subsample_n: int = 1000
    resamples: int = 10
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    synth_clouds_per_class: int = 30
    synth_points: int = 500
    solver: SolverConfig = field(default_factory=SolverConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    deepsets: DeepSetsConfig = field(default_factory=DeepSetsConfig)
    deepsets_epochs: int = 300
    bagging: int = 10

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        nested = {
            "synth": SyntheticSpec,
            "solver": SolverConfig,
            "schedule": TrainSchedule,
            "classifier": ClassifierConfig,
            "deepsets": DeepSetsConfig,
        }
        kwargs: dict = {}
        for key, value in d.items():
            if key in nested:
                sub = dict(value)
                for f in dataclasses.fields(nested[key]):
                    if f.name in sub and isinstance(sub[f.name], list):
                        sub[f.name] = tuple(sub[f.name])
                kwargs[key] = nested[key](**sub)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path: str | None, seed: int | None, threads: int | None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            overrides = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read config {path}: {e}") from e
        base = cfg.to_dict()
        for k, v in overrides.items():
            if k not in base:
                raise DataError(f"unknown config key {k!r}")
            if isinstance(base[k], dict):
                unknown = set(v) - set(base[k])
                if unknown:
                    raise DataError(f"unknown config keys {sorted(unknown)} in {k!r}")
                base[k].update(v)
            else:
                base[k] = v
        cfg = RunConfig.from_dict(base)
    updates: dict = {}
    if seed is not None:
        updates["seed"] = seed
        updates["solver"] = dataclasses.replace(cfg.solver, seed=seed)
    if threads is not None:
        updates["threads"] = threads
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _report_header(cfg: RunConfig) -> list[str]:
    return [
        f"# lotnn_version={__version__}",
        f"# config_hash={cfg.hash()}",
        f"# seed={cfg.seed}",
    ]


def _write_csv(path: Path, header: list[str], columns: list[str],
               rows: list[list]) -> None:
    lines = list(header)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def _reference_for(cfg: RunConfig, ds: LabeledDataset, seed: int) -> ReferenceMeasure:
    if cfg.reference == "fitted":
        return ReferenceMeasure.fitted(ds.clouds, seed=seed)
    if cfg.reference == "standard":
        return ReferenceMeasure.standard(ds.dim, seed=seed)
    if cfg.reference == "box":
        return ReferenceMeasure.box(ds.dim, cfg.box_halfwidth, seed=seed)
    raise DataError(f"unknown reference kind {cfg.reference!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(cfg: RunConfig, out_dir: str) -> int:
    ds = gen_synthetic(cfg.synth, cfg.synth_clouds_per_class, cfg.synth_points,
                       seed=cfg.seed)
    out = Path(out_dir)
    save_csv_dir(ds, out)
    manifest = {
        "lotnn_version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "spec": dataclasses.asdict(cfg.synth),
        "n_clouds_per_class": cfg.synth_clouds_per_class,
        "n_points": cfg.synth_points,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"wrote {len(ds.clouds)} clouds to {out}")
    return 0


def cmd_train(cfg: RunConfig, data_dir: str, bundle_path: str,
              history_path: str | None) -> int:
    ds = load_csv_dir(data_dir, cfg.subsample_n, seed=cfg.seed)
    train_ds, val_ds, test_ds = split(ds, seed=cfg.seed)
    reference = _reference_for(cfg, train_ds, seed=cfg.seed)
    emb, model, history = train_alternating(
        train_ds, val_ds, cfg.schedule, cfg.solver, cfg.classifier,
        seed=cfg.seed, reference=reference)

    bundle = ModelBundle(
        reference=emb.reference,
        pair_ids=emb.ids,
        pairs=emb.pairs,
        weightnet=model.weightnet,
        threshold=model.threshold,
        eval_seed=emb.eval_seed,
        eval_n=emb.eval_n,
        split_ids={"train": sorted(train_ds.ids), "val": sorted(val_ds.ids),
                   "test": sorted(test_ds.ids)},
        config=cfg.to_dict(),
        config_hash=cfg.hash(),
        seed=cfg.seed,
        build_version=__version__,
        history_digest={"phases": len(history),
                        "best_val_accuracy": emb.meta["best_val_accuracy"],
                        "best_phase": emb.meta["best_phase"]},
    )
    save_bundle(bundle, bundle_path)
    if history_path:
        cols = ["phase", "epoch", "ot_loss_mean", "clf_loss", "val_accuracy"]
        _write_csv(Path(history_path), _report_header(cfg), cols,
                   [[row[c] for c in cols] for row in history])
    print(f"trained {len(emb.ids)} maps over {len(history)} phases; "
          f"best validation accuracy {emb.meta['best_val_accuracy']:.4f} "
          f"(phase {emb.meta['best_phase']})")
    print(f"bundle written to {bundle_path}")
    return 0


def _metrics_row(tag: str, m) -> list:
    return [tag, m.tp, m.fp, m.fn, m.tn, m.precision, m.recall, m.accuracy,
            int(m.precision_defined)]


def cmd_eval(cfg: RunConfig, bundle_path: str, data_dir: str, resamples: int,
             subset: str, out_path: str | None) -> int:
    bundle = load_bundle(bundle_path)
    ds = load_csv_dir(data_dir, cfg.subsample_n, seed=cfg.seed)
    if subset == "all":
        ids = sorted(ds.ids)
    else:
        ids = [i for i in bundle.split_ids.get(subset, []) if i in set(ds.ids)]
    if not ids:
        raise DataError(f"no clouds to evaluate in subset {subset!r}")
    if ds.dim != bundle.reference.dim:
        raise DataError(f"data dim {ds.dim} != bundle dim {bundle.reference.dim}")
    model = bundle.classifier()
    eval_sample = bundle.reference.sample(bundle.eval_n, seed=bundle.eval_seed)

    rows = []
    labels, p1, pk = [], [], []
    for j, cid in enumerate(ids):
        # reuse the trained pair when the bundle has one, else embed fresh
        pair = bundle.pairs.get(cid)
        if pair is None:
            solver_cfg = dataclasses.replace(
                cfg.solver, seed=int(np.random.SeedSequence(
                    [cfg.seed, 77, j]).generate_state(1)[0]))
            pair = embed_test_cloud(bundle.reference, ds.cloud(cid), solver_cfg)
        labels.append(ds.labels[cid])
        p1.append(score(model, pair, eval_sample))
        pk.append(predict_resampled(model, pair, bundle.reference, bundle.eval_n,
                                    resamples, seed=cfg.seed + j))
        rows.append([cid, ds.labels[cid], p1[-1], pk[-1]])

    m1 = evaluate(p1, labels, model.threshold)
    mk = evaluate(pk, labels, model.threshold)
    cols = ["tag", "tp", "fp", "fn", "tn", "precision", "recall", "accuracy",
            "precision_defined"]
    metric_rows = [_metrics_row("k=1", m1), _metrics_row(f"k={resamples}", mk)]
    if out_path:
        _write_csv(Path(out_path), _report_header(cfg), cols, metric_rows)
        probs_path = Path(out_path).with_suffix(".probs.csv")
        _write_csv(probs_path, _report_header(cfg),
                   ["id", "label", "prob_k1", f"prob_k{resamples}"], rows)
    print(f"evaluated {len(ids)} clouds (subset={subset})")
    print(f"k=1  precision={m1.precision:.4f} recall={m1.recall:.4f} "
          f"accuracy={m1.accuracy:.4f}")
    print(f"k={resamples} precision={mk.precision:.4f} recall={mk.recall:.4f} "
          f"accuracy={mk.accuracy:.4f}")
    return 0


def cmd_dist(cfg: RunConfig, bundle_path: str, out_path: str | None) -> int:
    bundle = load_bundle(bundle_path)
    emb = EmbeddingSet.build(bundle.reference, bundle.pair_ids, bundle.pairs,
                             eval_n=bundle.eval_n, eval_seed=bundle.eval_seed)
    D = pairwise_matrix(emb)
    lines = _report_header(cfg)
    lines.append(",".join(["id"] + emb.ids))
    for i, cid in enumerate(emb.ids):
        lines.append(",".join([cid] + [repr(float(v)) for v in D[i]]))
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_bound(beta: float, eps: float, R: float, delta: float, n: int) -> int:
    value = theorem_bound(BoundParams(beta=beta, eps=eps, R=R, n=n, delta=delta))
    print(f"deviation bound: {value:.6f} "
          f"(beta={beta} eps={eps} R={R} delta={delta} n={n})")
    return 0


def cmd_baseline(cfg: RunConfig, data_dir: str, out_path: str | None) -> int:
    ds = load_csv_dir(data_dir, cfg.subsample_n, seed=cfg.seed)
    train_ds, val_ds, test_ds = split(ds, seed=cfg.seed)
    eval_ds = test_ds if test_ds.clouds else val_ds

    model, _ = ds_train(train_ds, val_ds, cfg.deepsets_epochs, cfg.deepsets,
                        seed=cfg.seed)
    labels = [eval_ds.labels[c.id] for c in eval_ds.clouds]
    single = [ds_forward(model, c) for c in eval_ds.clouds]
    m_single = evaluate(single, labels)

    members = [ds_train(train_ds, val_ds, cfg.deepsets_epochs, cfg.deepsets,
                        seed=cfg.seed + 1 + j)[0] for j in range(cfg.bagging)]
    bagged = [ds_bagging(members, c) for c in eval_ds.clouds]
    m_bag = evaluate(bagged, labels)

    cols = ["tag", "tp", "fp", "fn", "tn", "precision", "recall", "accuracy",
            "precision_defined"]
    rows = [_metrics_row("deepsets", m_single),
            _metrics_row(f"bagging_x{cfg.bagging}", m_bag)]
    if out_path:
        _write_csv(Path(out_path), _report_header(cfg), cols, rows)
    print(f"deepsets     precision={m_single.precision:.4f} "
          f"recall={m_single.recall:.4f} accuracy={m_single.accuracy:.4f}")
    print(f"bagging x{cfg.bagging} precision={m_bag.precision:.4f} "
          f"recall={m_bag.recall:.4f} accuracy={m_bag.accuracy:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lotnn",
        description="Point-cloud classification via neural optimal-transport "
                    "embeddings.",
    )
    parser.add_argument("--config", help="JSON file overriding RunConfig fields")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (values > 1 void determinism)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic two-class dataset")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="alternating map/classifier training")
    p.add_argument("--data", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--history", help="per-phase history CSV path")

    p = sub.add_parser("eval", help="embed held-out clouds and report metrics")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--resamples", type=int, default=10)
    p.add_argument("--subset", choices=["train", "val", "test", "all"],
                   default="test")
    p.add_argument("--out", help="metrics CSV path")

    p = sub.add_parser("dist", help="pairwise embedding distances as CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out")

    p = sub.add_parser("bound", help="print the deviation bound")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)

    p = sub.add_parser("baseline", help="DeepSets baseline plus bagging")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="metrics CSV path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.threads)
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.data, args.bundle, args.history)
        if args.command == "eval":
            return cmd_eval(cfg, args.bundle, args.data, args.resamples,
                            args.subset, args.out)
        if args.command == "dist":
            return cmd_dist(cfg, args.bundle, args.out)
        if args.command == "bound":
            return cmd_bound(args.beta, args.eps, args.R, args.delta, args.n)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.data, args.out)
        parser.error(f"unknown command {args.command!r}")
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except LotnnError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
