"""Command-line entry point.

    macdae ingest   --config exp.json      dataset.json, features.ckpt
    macdae pretrain --config exp.json      pretrain.ckpt, pretrain_loss.csv
    macdae train    --config exp.json      ranker.ckpt, train_loss.csv
    macdae evaluate --config exp.json      metrics.csv, metrics.json, predictions.csv
    macdae analyze  --config exp.json      analysis.json, hidden_states.csv
    macdae ablate   --config exp.json      ablation.csv
    macdae sweep    --config exp.json      k_sweep.csv
    macdae synth    --output data.tsv      synthetic planted-regime log

Stages read their predecessors' artifacts from the output directory, which
is ``--output``, else ``$MACDAE_OUTPUT``, else the config's ``output``.
Every command also writes ``<command>.config.json`` with the resolved config.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from .config import load_config
from .data import write_tsv
from .errors import ConfigError, DataError, MacdaeError
from .evaluation import feature_ablation, head_cosine_stats, hidden_moments
from .pipeline import (
    AblationRecipe,
    as_batch,
    load_rows,
    prepare,
    pretrain_inputs,
    run_evaluation,
    run_experiment,
    run_pretrain,
    run_ranker,
    score_fn,
)
from .pretrain import extract_representation
from .synthetic import planted_regime_rows

log = logging.getLogger("macdae")

OUTPUT_ENV = "MACDAE_OUTPUT"
COMMANDS = ("ingest", "pretrain", "train", "evaluate", "analyze", "ablate", "sweep")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Run:
    """Resolved config, output directory and the rebuilt dataset for one command."""

    def __init__(self, cfg, out):
        self.cfg = cfg
        self.out = Path(out)
        self._data = None

    @property
    def snapshot(self):
        return self.cfg.snapshot()

    def path(self, name):
        return self.out / name

    def data(self):
        if self._data is None:
            self._data = prepare(load_rows(self.cfg), self.cfg)
        return self._data

    def require(self, name):
        p = self.path(name)
        if not p.exists():
            raise DataError(f"missing {name} in {self.out}; run the earlier stage first", field=name)
        return p

    def checked_data(self):
        """Rebuild the dataset and confirm it matches what ``ingest`` recorded."""
        dataset, _ = self.data()
        saved = json.loads(self.require("dataset.json").read_text(encoding="utf-8"))
        if saved["manifest"]["digest"] != dataset.manifest()["digest"]:
            raise DataError("dataset split differs from the ingested manifest", field="dataset.json")
        ckpt = ck.load_checkpoint(self.require("features.ckpt"))
        return dataset, ck.features_from_tensors(ckpt.tensors, ckpt.config["side_dim"])


def cmd_ingest(run):
    dataset, features = run.data()
    _write_json(run.path("dataset.json"), {"config": run.snapshot, "manifest": dataset.manifest()})
    ck.save_checkpoint(run.path("features.ckpt"),
                       ck.features_checkpoint(features, {"config": run.snapshot}))
    print(f"ingest: {len(dataset.train)} train / {len(dataset.test)} test rows, "
          f"{dataset.n_users} users, {dataset.n_items} items")


def cmd_pretrain(run):
    dataset, features = run.checked_data()
    model, trace = run_pretrain(dataset, features, run.cfg.pretrain)
    ck.save_checkpoint(run.path("pretrain.ckpt"),
                       ck.pretrain_checkpoint(model, {"config": run.snapshot}))
    _write_csv(run.path("pretrain_loss.csv"), ["epoch", "reconstruction", "kl", "penalty", "total"],
               [[t.epoch, *t.report.as_row().values()] for t in trace])
    print(f"pretrain: {model.kind} K={model.config.heads} final loss {trace[-1].report.total:.6f}")


def cmd_train(run):
    dataset, features = run.checked_data()
    pretrained = None
    if run.cfg.ranker.integration != "none":
        pretrained = ck.pretrain_from_checkpoint(ck.load_checkpoint(run.require("pretrain.ckpt")))
    model, losses = run_ranker(dataset, features, run.cfg.ranker, pretrained,
                               run.cfg.data.train_negatives)
    ck.save_checkpoint(run.path("ranker.ckpt"), ck.ranker_checkpoint(model, {"config": run.snapshot}))
    _write_csv(run.path("train_loss.csv"), ["epoch", "loss"],
               [[e + 1, v] for e, v in enumerate(losses)])
    print(f"train: integration={run.cfg.ranker.integration} final loss {losses[-1]:.6f}")


def _metric_rows(metrics, model_id, dataset_name, seed):
    rows = []
    for name, value in metrics.items():
        metric, _, k = name.partition("@")
        rows.append([model_id, dataset_name, metric, k, value, seed])
    return rows


def cmd_evaluate(run):
    dataset, _ = run.checked_data()
    ranker_path = run.require("ranker.ckpt")
    model = ck.ranker_from_checkpoint(ck.load_checkpoint(ranker_path))
    metrics = run_evaluation(model, dataset, run.cfg.evaluation)
    model_id = hashlib.sha256(ranker_path.read_bytes()).hexdigest()[:12]
    header = ["model_id", "dataset", "metric", "k", "value", "seed"]
    rows = _metric_rows(metrics, model_id, run.cfg.name, run.cfg.evaluation.seed)
    _write_csv(run.path("metrics.csv"), header, rows)
    _write_json(run.path("metrics.json"),
                {"config": run.snapshot, "rows": [dict(zip(header, r)) for r in rows]})
    batch, _ = as_batch(dataset, dataset.test)
    scores = score_fn(model)(batch.users, batch.items, batch.side)
    _write_csv(run.path("predictions.csv"), ["example_id", "score"],
               [[r.row_id, s] for r, s in zip(dataset.test, scores)])
    for name, value in metrics.items():
        print(f"{name}\t{value:.6f}")


def cmd_analyze(run):
    dataset, features = run.checked_data()
    model = ck.pretrain_from_checkpoint(ck.load_checkpoint(run.require("pretrain.ckpt")))
    X = pretrain_inputs(dataset, features)
    if len(X) == 0:
        raise DataError("no positive training rows to analyze")
    rep = extract_representation(model, X).values
    if model.config.heads >= 2:
        report = head_cosine_stats(model, X).to_dict()
    else:
        m, v = hidden_moments(rep)
        report = {"mean_cosine": None, "cosine_matrix": None, "mean_of_means": m,
                  "mean_of_variances": v}
    _write_json(run.path("analysis.json"), {"config": run.snapshot, "kind": model.kind,
                                            "heads": model.config.heads, **report})
    _write_csv(run.path("hidden_states.csv"), [f"h{j}" for j in range(rep.shape[1])], rep.tolist())
    print(f"analyze: mean inter-head cosine {report['mean_cosine']}")


class _Memo:
    def __init__(self, fn):
        self.fn = fn
        self.cache = {}

    def __call__(self, rows, exclude):
        key = tuple(exclude)
        if key not in self.cache:
            self.cache[key] = self.fn(rows, exclude)
        return self.cache[key]


def cmd_ablate(run):
    if not run.cfg.ablation_groups:
        raise ConfigError("no feature groups to ablate", field="ablation.groups")
    rows = load_rows(run.cfg)
    recipe = _Memo(AblationRecipe(run.cfg))
    out = []
    for group in run.cfg.ablation_groups:
        delta = feature_ablation(rows, group, recipe)
        out.append([group, recipe(rows, ()), delta])
        print(f"{group}\t{delta:+.6f}")
    _write_csv(run.path("ablation.csv"), ["group", "auc_full", "delta_auc"], out)


def cmd_sweep(run):
    rows = load_rows(run.cfg)
    cfg = run.cfg
    ranker = cfg.ranker if cfg.ranker.integration != "none" else replace(cfg.ranker,
                                                                         integration="fine_tune")
    out = []
    for kind in cfg.sweep_kinds:
        for heads in cfg.sweep_heads:
            if cfg.pretrain.hidden_dim % heads:
                raise ConfigError(f"hidden_dim {cfg.pretrain.hidden_dim} is not divisible by {heads}",
                                  field="sweep.heads")
            pre = replace(cfg.pretrain, kind=kind, heads=heads)
            metrics = run_experiment(rows, replace(cfg, pretrain=pre, ranker=ranker))
            for name, value in metrics.items():
                metric, _, k = name.partition("@")
                out.append([kind, heads, metric, k, value, cfg.seed])
                print(f"{kind}\tK={heads}\t{name}\t{value:.6f}")
    _write_csv(run.path("k_sweep.csv"), ["kind", "heads", "metric", "k", "value", "seed"], out)


HANDLERS = {
    "ingest": cmd_ingest,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def cmd_synth(args):
    if not args.output:
        raise ConfigError("synth needs --output <file.tsv>", field="output")
    rows = planted_regime_rows(n_users=args.users, n_items=args.items, n_rows=args.rows,
                               noise_column=args.noise_column, seed=args.seed or 0)
    write_tsv(args.output, rows)
    print(f"synth: wrote {len(rows)} rows to {args.output}")


def build_parser():
    p = argparse.ArgumentParser(prog="macdae", description="Implicit-context pre-training and ranking.")
    p.add_argument("command", choices=COMMANDS + ("synth",))
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--output", help="output directory (synth: output TSV path)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--preset", help="apply a named preset before the config")
    p.add_argument("-v", "--verbose", action="store_true")
    g = p.add_argument_group("synth")
    g.add_argument("--users", type=int, default=80)
    g.add_argument("--items", type=int, default=60)
    g.add_argument("--rows", type=int, default=3000)
    g.add_argument("--noise-column", action="store_true")
    return p


def run_command(args):
    if args.command == "synth":
        return cmd_synth(args)
    if not args.config:
        raise ConfigError("--config is required", field="config")
    output = args.output or os.environ.get(OUTPUT_ENV) or None
    cfg = load_config(args.config, seed_override=args.seed, preset_override=args.preset,
                      output_override=str(Path(output).resolve()) if output else None)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, out)
    _write_json(out / f"{args.command}.config.json", run.snapshot)
    HANDLERS[args.command](run)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run_command(args)
    except MacdaeError as exc:
        print(exc.diagnostic(), file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
