"""Command-line pipeline: simulate -> featurize -> train -> predict -> evaluate.

Every run writes a ``manifest.json`` (resolved config + seed + schema
versions, no timestamps) next to its outputs so runs are reproducible and
diffable. All randomness flows from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data_model import ItemCatalog, TelemetryError, ingest_logs, write_logs
from .ert import ErtEnsemble, ErtParams, ModelError, train_ert
from .evaluation import EvalConfig, evaluate
from .features import default_feature_config, vectorize
from .mlp import MlpModel, MlpParams, train_mlp
from .sampling import SamplerConfig
from .synth import SynthConfig, default_catalog, generate, save_ground_truth

MANIFEST_SCHEMA_VERSION = 1


def _write_manifest(out_dir: Path, stage: str, config: dict) -> None:
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool_version": __version__,
        "stage": stage,
        "config": config,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _load_config_file(path: str | None) -> dict:
    """Flat key-value JSON document; keys mirror the CLI flag names."""
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError("config file must be a flat JSON object")
    return doc


def _merged(args: argparse.Namespace, keys: list[str]) -> dict:
    """CLI flags win over config-file values, which win over defaults."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    out = {}
    for key in keys:
        if getattr(args, key, None) is not None:
            out[key] = getattr(args, key)
        elif key in file_cfg:
            out[key] = file_cfg[key]
    return out


def _load_inputs(args) -> tuple[ItemCatalog, list]:
    catalog = ItemCatalog.load(args.catalog)
    players = ingest_logs(args.telemetry, catalog)
    return catalog, players


def cmd_simulate(args) -> int:
    cfg = _merged(args, ["players", "items", "noise", "seed", "mean_lifetime"])
    if args.full_scale:
        cfg.setdefault("players", 33488)
        cfg.setdefault("mean_lifetime", 900.0)
    config = SynthConfig(
        n_players=cfg.get("players", 2000),
        n_items=cfg.get("items", 8),
        noise=cfg.get("noise", 0.0),
        mean_lifetime=cfg.get("mean_lifetime", 60.0),
        seed=cfg.get("seed", 0),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    players, ground_truth = generate(config)
    catalog = default_catalog(config.n_items)
    write_logs(players, out / "telemetry.jsonl", catalog)
    catalog.save(out / "catalog.txt")
    save_ground_truth(ground_truth, out / "ground_truth.json")
    _write_manifest(
        out,
        "simulate",
        {
            "players": config.n_players,
            "items": config.n_items,
            "noise": config.noise,
            "mean_lifetime": config.mean_lifetime,
            "seed": config.seed,
        },
    )
    print(f"simulate: wrote {len(players)} players to {out}")
    return 0


def _feature_config(catalog: ItemCatalog, args):
    channels = tuple(args.activity_channels.split(",")) if args.activity_channels else ("playtime", "level")
    return default_feature_config(catalog, activity_channels=channels)


def cmd_featurize(args) -> int:
    catalog, players = _load_inputs(args)
    fconfig = _feature_config(catalog, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = 0
    with open(out / "features.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["player_id", "cutoff", *fconfig.layout()])
        for series in players:
            if series.first_day > args.cutoff_day:
                continue
            fv = vectorize(series, args.cutoff_day, fconfig, catalog)
            writer.writerow([series.player_id, args.cutoff_day, *[repr(v) for v in fv.values]])
            rows += 1
    _write_manifest(
        out,
        "featurize",
        {"cutoff_day": args.cutoff_day, "channels": list(fconfig.channels),
         "edge_window": fconfig.edge_window},
    )
    print(f"featurize: wrote {rows} rows to {out / 'features.csv'}")
    return 0


def cmd_train(args) -> int:
    catalog, players = _load_inputs(args)
    fconfig = _feature_config(catalog, args)
    if args.cutoff_day is not None:
        from .data_model import truncate

        players = [
            truncate(s, args.cutoff_day) for s in players if s.first_day <= args.cutoff_day
        ]
    cfg = _merged(
        args,
        ["seed", "trees_per_iter", "iterations", "batch_users", "max_samples_per_player",
         "learning_rate", "hidden", "sgd_batch", "repeats_per_iteration"],
    )
    seed = cfg.get("seed", 0)
    sampler = SamplerConfig(max_samples_per_player=cfg.get("max_samples_per_player", 4), seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model == "ert":
        params = ErtParams(
            trees_per_iteration=cfg.get("trees_per_iter", 20),
            iterations=cfg.get("iterations", 30),
            batch_users=cfg.get("batch_users", 10000),
            seed=seed,
        )
        model = train_ert(players, catalog, fconfig, sampler, params, n_threads=args.threads)
        model.save(out / "model.json")
        trained = {"trees": model.n_trees}
    else:
        hidden = tuple(int(h) for h in cfg.get("hidden", "2048,2048").split(","))
        params = MlpParams(
            hidden_sizes=hidden,
            iterations=cfg.get("iterations", 30),
            repeats_per_iteration=cfg.get("repeats_per_iteration", 5),
            learning_rate=cfg.get("learning_rate", 0.01),
            sgd_batch=cfg.get("sgd_batch", 128),
            batch_users=cfg.get("batch_users", 10000),
            seed=seed,
        )
        model = train_mlp(players, catalog, fconfig, sampler, params)
        model.save(out / "model.json")
        trained = {"hidden_sizes": list(hidden)}
    _write_manifest(
        out,
        "train",
        {"model": args.model, "seed": seed, "cutoff_day": args.cutoff_day,
         "channels": list(fconfig.channels), **trained},
    )
    print(f"train: wrote {args.model} model to {out / 'model.json'}")
    return 0


def _load_model(path: str):
    doc = json.loads(Path(path).read_text())
    kind = doc.get("kind")
    if kind == "ert":
        return ErtEnsemble.load(path)
    if kind == "mlp":
        return MlpModel.load(path)
    raise ModelError(f"unsupported model file {path}")


def _check_catalog(model, catalog: ItemCatalog) -> None:
    if model.catalog.items != catalog.items:
        raise ModelError(
            "catalog mismatch: model was trained on a different item catalog"
        )


def cmd_predict(args) -> int:
    catalog, players = _load_inputs(args)
    model = _load_model(args.model_file)
    _check_catalog(model, catalog)
    fconfig = _feature_config(catalog, args)
    if fconfig.layout() != model.layout:
        raise ModelError("feature layout mismatch between telemetry config and model")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids, matrix = [], []
    for series in players:
        if series.first_day > args.cutoff_day:
            continue
        fv = vectorize(series, args.cutoff_day, fconfig, catalog)
        ids.append(series.player_id)
        matrix.append(model.predict(fv))
    probs = np.array(matrix)
    with open(out / "predictions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["player_id", *catalog.items])
        for pid, row in zip(ids, probs):
            writer.writerow([pid, *[repr(float(v)) for v in row]])
    if args.heatmap:
        _save_heatmap(probs, out / args.heatmap)
    _write_manifest(out, "predict", {"cutoff_day": args.cutoff_day, "model_file": str(args.model_file)})
    print(f"predict: wrote {len(ids)} rows to {out / 'predictions.csv'}")
    return 0


def _save_heatmap(probs: np.ndarray, path: Path) -> None:
    """Per-player x per-item probability matrix; darker = higher."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 6))
    ax.imshow(probs, cmap="Greys", aspect="auto", vmin=0.0, vmax=1.0)
    ax.set_xlabel("item")
    ax.set_ylabel("player")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_evaluate(args) -> int:
    catalog, players = _load_inputs(args)
    model = _load_model(args.model_file)
    _check_catalog(model, catalog)
    fconfig = _feature_config(catalog, args)
    if fconfig.layout() != model.layout:
        raise ModelError("feature layout mismatch between telemetry config and model")
    config = EvalConfig(cutoff=args.cutoff_day, window=args.window)
    report = evaluate(model, players, config, fconfig, catalog)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_text() + "\n")
    _write_manifest(
        out,
        "evaluate",
        {"cutoff_day": args.cutoff_day, "window": args.window,
         "model_file": str(args.model_file)},
    )
    print(report.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nextbuy", description="Next-purchase item recommendation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, telemetry=True):
        if telemetry:
            p.add_argument("--telemetry", required=True, help="JSONL telemetry file")
            p.add_argument("--catalog", required=True, help="item catalog file")
            p.add_argument("--activity-channels", dest="activity_channels",
                           help="comma-separated activity channel names (default playtime,level)")
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="generate synthetic telemetry")
    p.add_argument("--players", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--mean-lifetime", dest="mean_lifetime", type=float)
    p.add_argument("--full-scale", action="store_true",
                   help="preset: ~33k players with long lifetimes")
    p.add_argument("--seed", type=int)
    common(p, telemetry=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", help="emit per-player feature vectors as CSV")
    p.add_argument("--cutoff-day", dest="cutoff_day", type=int, required=True)
    common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--model", choices=["ert", "mlp"], required=True)
    p.add_argument("--cutoff-day", dest="cutoff_day", type=int,
                   help="truncate all series at this day before training")
    p.add_argument("--seed", type=int)
    p.add_argument("--trees-per-iter", dest="trees_per_iter", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-users", dest="batch_users", type=int)
    p.add_argument("--max-samples-per-player", dest="max_samples_per_player", type=int)
    p.add_argument("--hidden", help="comma-separated hidden layer sizes (mlp)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--sgd-batch", dest="sgd_batch", type=int)
    p.add_argument("--repeats-per-iteration", dest="repeats_per_iteration", type=int)
    p.add_argument("--threads", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-player item probabilities")
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--cutoff-day", dest="cutoff_day", type=int, required=True)
    p.add_argument("--heatmap", help="also write a grayscale heatmap image (filename)")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="top-k accuracy report")
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--cutoff-day", dest="cutoff_day", type=int, required=True)
    p.add_argument("--window", type=int, default=50)
    common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TelemetryError, ModelError, OSError, ValueError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
