"""Command-line entry point: ``trajrecon <synth|train|eval|ablate|reconstruct|gradcheck>``.

Every command writes under ``--out`` only, records a ``manifest.json`` with
sha256 digests of what it read and wrote, and exits 0 on success, 2 on a
configuration error, 3 on a data error and 4 on a numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import torch
import yaml

from . import __version__
from .baselines import knn_fit, markov_fit
from .config import ConfigError, RunConfig, load_config, with_seed
from .core import DataError, Dataset, Modality, N_SLOTS, load_dataset, save_dataset
from .encoder import NumericalError
from .evaluation import (
    DEFAULT_ABLATIONS,
    fit_and_score,
    predict_knn,
    predict_markov,
    predict_transformer,
    reconstruct,
    run_ablation,
    save_predictions,
    score,
)
from .gradcheck import gradcheck, tiny_instance
from .model import TrajectoryModel, load_checkpoint
from .synthgen import generate_world, load_answer_key, mean_observed_hours, save_answer_key, sparsify
from .training import split_users, train, write_curve_csv

log = logging.getLogger("trajrecon")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

DATASET_FILE = "dataset.jsonl"
ANSWER_FILE = "answer_key.jsonl"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


class Run:
    """A run directory plus the manifest that describes it."""

    def __init__(self, out: str, command: str, cfg: RunConfig):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.manifest = {
            "tool_version": __version__,
            "command": command,
            "config_hash": cfg.hash(),
            "seeds": {"world": cfg.world.seed, "split": cfg.data.split_seed, "training": cfg.training.seed},
            "inputs": {},
            "artifacts": {},
        }
        (self.dir / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
        self.artifact("config.yaml")

    def path(self, name: str) -> Path:
        return self.dir / name

    def input(self, label: str, path: Path) -> None:
        self.manifest["inputs"][label] = {"path": str(path), "sha256": sha256_file(path)}

    def artifact(self, name: str) -> None:
        self.manifest["artifacts"][name] = sha256_file(self.dir / name)

    def finish(self, **extra) -> None:
        self.manifest.update(extra)
        dump_json(self.manifest, self.dir / "manifest.json")


def _data_files(data: str) -> tuple[Path, Path]:
    root = Path(data)
    ds_path = root / DATASET_FILE if root.is_dir() else root
    key_path = ds_path.with_name(ANSWER_FILE)
    if not ds_path.exists():
        raise DataError(f"{ds_path}: no such dataset")
    return ds_path, key_path


def _splits(ds: Dataset, cfg: RunConfig):
    tr, va, te = split_users(ds.users(), cfg.data.split_seed, cfg.data.split)
    return ds.subset(tr), ds.subset(va), ds.subset(te), te


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    run = Run(args.out, "synth", cfg)
    world = generate_world(cfg.world)
    ds, key = sparsify(world, cfg.sparsify, seed=cfg.world.seed)
    save_dataset(ds, run.path(DATASET_FILE))
    save_answer_key(key, ds.vocab, run.path(ANSWER_FILE))
    save_dataset(world.dataset(), run.path("truth.jsonl"))
    stats = {"users": len(ds.users()), "user_days": len(ds.trajectories), "hidden_visits": len(key),
             "mean_observed_hours": mean_observed_hours(ds)}
    dump_json(stats, run.path("synth_stats.json"))
    for name in (DATASET_FILE, ANSWER_FILE, "truth.jsonl", "synth_stats.json"):
        run.artifact(name)
    run.finish()
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    ds_path, _ = _data_files(args.data)
    run = Run(args.out, "train", cfg)
    run.input("dataset", ds_path)
    ds = load_dataset(ds_path, cfg.model.max_visits)
    train_ds, val_ds, _, _ = _splits(ds, cfg)
    torch.manual_seed(cfg.training.seed)
    model = TrajectoryModel.for_dataset(ds, cfg.model)

    def report(stats):
        print(f"epoch {stats.epoch:>3}  train_loss {stats.train_loss:.4f}  val_loss {stats.val_loss:.4f}  "
              f"val_acc {stats.val_acc:.4f}  val_top3 {stats.val_top3:.4f}", flush=True)

    result = train(train_ds, model, cfg.training, val_ds if val_ds.trajectories else None, run.dir,
                   resume=args.resume, on_epoch=report)
    write_curve_csv(run.path("curve.csv"), result.curve)
    for name in ("best.pt", "last.pt", "curve.csv"):
        if run.path(name).exists():
            run.artifact(name)
    run.finish(checkpoint="best.pt", best_epoch=result.best_epoch, steps=result.step)
    return EXIT_OK


def _metric_block(report) -> dict:
    out = report.to_json()
    out.pop("config", None)
    return out


def cmd_eval(args, cfg: RunConfig) -> int:
    ds_path, key_path = _data_files(args.data)
    if not key_path.exists():
        raise DataError(f"{key_path}: answer key missing")
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"{ckpt}: no such checkpoint")
    run = Run(args.out, "eval", cfg)
    run.input("dataset", ds_path)
    run.input("answer_key", key_path)
    run.input("checkpoint", ckpt)
    ds = load_dataset(ds_path)
    key = load_answer_key(key_path, ds.vocab)
    train_ds, _, test_ds, test_users = _splits(ds, cfg)
    if args.split == "all":
        test_ds, test_key = ds, key
    else:
        test_key = key.subset(test_users)
    model, _ = load_checkpoint(ckpt, ds.vocab)
    preds = {"transformer": predict_transformer(model, test_ds, test_key, cfg.eval.top_n, cfg.eval.batch_size)}
    if args.baselines:
        preds["markov"] = predict_markov(markov_fit(train_ds.trajectories, ds.vocab.n_places), test_ds, test_key,
                                         cfg.eval.top_n)
        preds["knn"] = predict_knn(knn_fit(train_ds.trajectories, train_ds), test_ds, test_key, cfg.eval.top_n)
    metrics = {"split": args.split, "config_hash": cfg.hash()}
    for name, p in preds.items():
        rep = score(p, test_key)
        metrics[name] = _metric_block(rep)
        save_predictions(p, ds.vocab, run.path(f"predictions_{name}.jsonl"))
        run.artifact(f"predictions_{name}.jsonl")
        print(rep.table(name))
    dump_json(metrics, run.path("metrics.json"))
    run.artifact("metrics.json")
    run.finish()
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    ds_path, key_path = _data_files(args.data)
    if not key_path.exists():
        raise DataError(f"{key_path}: answer key missing")
    run = Run(args.out, "ablate", cfg)
    run.input("dataset", ds_path)
    run.input("answer_key", key_path)
    ds = load_dataset(ds_path, cfg.model.max_visits)
    key = load_answer_key(key_path, ds.vocab)
    train_ds, val_ds, test_ds, test_users = _splits(ds, cfg)
    cells = dict(DEFAULT_ABLATIONS)
    for name in cfg.eval.ablations:
        if name not in cells:
            raise ConfigError(f"eval.ablations: unknown cell {name!r}")
    rows = run_ablation(cfg.model, cfg.training, train_ds, val_ds if val_ds.trajectories else None, test_ds,
                        key.subset(test_users), [(n, cells[n]) for n in cfg.eval.ablations])
    table = {"config_hash": cfg.hash(), "rows": [r.to_json() for r in rows]}
    dump_json(table, run.path("ablation.json"))
    run.artifact("ablation.json")
    print(f"{'cell':<16}{'acc':>9}{'top3':>9}{'top5':>9}{'d_acc':>9}")
    for r in rows:
        print(f"{r.name:<16}{r.report.accuracy:>9.4f}{r.report.top3:>9.4f}{r.report.top5:>9.4f}{r.delta_accuracy:>+9.4f}")
    run.finish()
    return EXIT_OK


def parse_queries(spec: str | None, modality: Modality) -> list[int]:
    """``None``/empty -> no queries; ``all`` -> every CDR slot; else a comma list or a JSON list file."""
    if spec is None or spec.strip() == "":
        return []
    if spec == "all":
        if modality is not Modality.CDR:
            raise ConfigError("queries: 'all' is only defined for CDR slots")
        return list(range(1, N_SLOTS + 1))
    path = Path(spec)
    if path.exists():
        try:
            values = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"queries: {path}: {exc}") from exc
    else:
        values = [v for v in spec.split(",") if v.strip()]
    try:
        return [int(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"queries: {exc}") from exc


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    src = Path(args.input)
    if not src.exists():
        raise DataError(f"{src}: no such dataset")
    run = Run(args.out, "reconstruct", cfg)
    run.input("dataset", src)
    ds = load_dataset(src)
    queries = parse_queries(args.queries, ds.modality)
    out_path = run.path("reconstructed.jsonl")
    errors: list[dict] = []
    if not queries:
        shutil.copyfile(src, out_path)
    else:
        ckpt = Path(args.checkpoint) if args.checkpoint else None
        if ckpt is None or not ckpt.exists():
            raise DataError(f"{ckpt}: no such checkpoint")
        run.input("checkpoint", ckpt)
        model, _ = load_checkpoint(ckpt, ds.vocab)
        done = []
        for t in ds.trajectories:
            filled, errs = reconstruct(model, ds, t, queries, cfg.eval.top_n)
            done.append(filled)
            errors.extend(errs)
        save_dataset(ds.with_trajectories(done), out_path)
    dump_json({"errors": errors}, run.path("reconstruct_errors.json"))
    run.artifact("reconstructed.jsonl")
    run.artifact("reconstruct_errors.json")
    run.finish()
    print(json.dumps({"trajectories": len(ds.trajectories), "queries": len(queries), "errors": len(errors)}))
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    run = Run(args.out, "gradcheck", cfg)
    model, batch, plans = tiny_instance(seed=cfg.training.seed)
    rep = gradcheck(model, batch, plans, eps=args.eps, tol=args.tol)
    dump_json(rep.to_json(), run.path("gradcheck.json"))
    run.artifact("gradcheck.json")
    run.finish()
    print(f"max relative error {rep.max_rel_error:.3e} over {rep.n_checked} parameters: "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "reconstruct": cmd_reconstruct,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration; flags override it")
    common.add_argument("--seed", type=int, help="override world, split and training seeds")
    common.add_argument("--threads", type=int, default=1, help="torch intra-op threads (default 1)")
    common.add_argument("--out", required=True, help="run directory; every output lands here")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trajrecon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic world, sparse dataset and answer key")
    p = sub.add_parser("train", parents=[common], help="train on the train split of a dataset")
    p.add_argument("--data", required=True, help="synth run directory or dataset file")
    p.add_argument("--resume", action="store_true", help="continue from last.pt in --out")
    p = sub.add_parser("eval", parents=[common], help="score a checkpoint against the answer key")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--no-baselines", dest="baselines", action="store_false", help="skip Markov and KNN")
    p = sub.add_parser("ablate", parents=[common], help="retrain with context features nulled")
    p.add_argument("--data", required=True)
    p = sub.add_parser("reconstruct", parents=[common], help="fill query slots/times of sparse trajectories")
    p.add_argument("--input", required=True, help="dataset file to complete")
    p.add_argument("--checkpoint")
    p.add_argument("--queries", default="", help="'all', comma list of slots (CDR) or seconds (GPS), or a JSON file")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check on a tiny model")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads: must be >= 1")
        torch.set_num_threads(args.threads)
        cfg = with_seed(load_config(args.config), args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
