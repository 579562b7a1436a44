"""Command-line entry point wiring every pipeline stage.

Each subcommand resolves its configuration with precedence
flags > manifest file > built-in defaults, echoes the effective
manifest into the output directory, then runs one module pipeline.
Re-running a command from its echoed manifest reproduces the outputs
byte for byte (with workers=1).

Exit codes: 0 ok, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .attribution import integrated_gradients, select_top_k_posts
from .corpus import (EmbeddingStore, SyntheticSpec, generate_synthetic,
                     load_corpus, save_corpus)
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .metrics import evaluate_run, format_report
from .model import ModelConfig, SetModel, save_checkpoint
from .rng import stream
from .streaming import (RunPolicy, load_outcomes, load_snapshots,
                        run_simulation, save_decision_log, save_outcomes,
                        save_snapshots)
from .training import TrainConfig, train

OUT_DIR_ENV = "SETRISK_OUT_DIR"

DEFAULT_MANIFEST = {
    "seed": 0,
    "paths": {"corpus": None, "embeddings": None, "checkpoint": None,
              "out_dir": None},
    "model": {"input_dim": None, "d_model": 256, "n_layers": 4, "n_heads": 8,
              "d_ff": None, "dropout_rate": 0.1, "layer_norm_eps": 1e-5},
    "train": {"k_posts": 16, "epochs": 120, "effective_batch_size": 128,
              "lr_min": 1e-5, "lr_max": 1e-4, "cycle_epochs": 6,
              "weight_decay": 0.01, "val_fraction": 0.2, "seed": None,
              "class_weight_pos": None, "class_weight_neg": None},
    "policy": {"variant": "recent-k", "k_posts": 16, "threshold": 0.9,
               "ig_steps": 32},
    "metrics": {"o_values": [5, 50], "c_fp": None, "c_fn": 1.0, "c_tp": 1.0,
                "penalty_p": 0.0078},
    "synth": {"n_pos": 200, "n_neg": 800, "posts_min": 30, "posts_max": 80,
              "signal_rate": 0.3, "noise_sigma": 0.3, "dimension": 64,
              "seed": None},
    "simulate": {"max_rounds": None, "snapshot_rounds": [1, 100, 500, 1000],
                 "workers": 1},
    "evaluate": {"outcomes": None, "snapshots": None},
    "attribute": {"users": None, "window": 16, "steps": 32, "top": 10},
    "ablate": {"k_grid": [4, 8, 16, 32, 64, 128], "stores": None},
}


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _deep_merge(base, overlay):
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _load_manifest_file(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: manifest is not valid JSON: {e}") from None
    if not isinstance(loaded, dict):
        raise DataError(f"{path}: manifest must be a JSON object")
    unknown = sorted(set(loaded) - set(DEFAULT_MANIFEST))
    if unknown:
        raise DataError(f"{path}: unknown manifest sections {unknown}")
    return loaded


def _resolve_manifest(args, flag_map):
    """defaults <- manifest file <- command-line flags."""
    manifest = copy.deepcopy(DEFAULT_MANIFEST)
    if getattr(args, "manifest", None):
        manifest = _deep_merge(manifest, _load_manifest_file(args.manifest))
    overlay = {}
    for dest, path in flag_map.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = overlay
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    return _deep_merge(manifest, overlay)


def _out_dir(manifest):
    out = manifest["paths"]["out_dir"] or os.environ.get(OUT_DIR_ENV)
    if not out:
        raise ConfigError(
            f"no output directory: pass --out, set paths.out_dir in the "
            f"manifest, or set ${OUT_DIR_ENV}")
    os.makedirs(out, exist_ok=True)
    manifest["paths"]["out_dir"] = out
    return out


def _write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")
    os.replace(tmp, path)


def _write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _echo_manifest(manifest, out):
    _write_json(os.path.join(out, "manifest.json"), manifest)


def _require(manifest, section, key, flag):
    value = manifest[section][key]
    if value is None:
        raise ConfigError(f"missing {section}.{key}: pass {flag} or set it "
                          f"in the manifest")
    return value


def _load_inputs(manifest, need_corpus=True, need_embeddings=True):
    users = store = None
    if need_corpus:
        users = load_corpus(_require(manifest, "paths", "corpus", "--corpus"))
    if need_embeddings:
        store = EmbeddingStore.load(
            _require(manifest, "paths", "embeddings", "--embeddings"))
    return users, store


def _model_config(manifest, store):
    cfg = dict(manifest["model"])
    if cfg["input_dim"] is None:
        if store is None:
            raise ConfigError("model.input_dim is not set and no embedding "
                              "store is available to infer it from")
        cfg["input_dim"] = store.dimension
    manifest["model"] = dict(cfg)  # echo the resolved width
    return ModelConfig.from_dict(cfg)


def _train_config(manifest):
    cfg = dict(manifest["train"])
    if cfg["seed"] is None:
        cfg["seed"] = manifest["seed"]
    manifest["train"] = dict(cfg)
    return TrainConfig.from_dict(cfg)


def _policy(manifest):
    return RunPolicy.from_dict(manifest["policy"])


# ---------------------------------------------------------------- commands


def cmd_gen_synth(args):
    manifest = _resolve_manifest(args, {
        "out": ("paths", "out_dir"),
        "n_pos": ("synth", "n_pos"), "n_neg": ("synth", "n_neg"),
        "posts_min": ("synth", "posts_min"), "posts_max": ("synth", "posts_max"),
        "signal_rate": ("synth", "signal_rate"),
        "noise_sigma": ("synth", "noise_sigma"),
        "dimension": ("synth", "dimension"), "seed": ("seed",)})
    out = _out_dir(manifest)
    s = manifest["synth"]
    seed = s["seed"] if s["seed"] is not None else manifest["seed"]
    spec = SyntheticSpec(n_pos=s["n_pos"], n_neg=s["n_neg"],
                         posts_per_user=(s["posts_min"], s["posts_max"]),
                         signal_rate=s["signal_rate"],
                         noise_sigma=s["noise_sigma"],
                         dimension=s["dimension"], seed=seed)
    users, store, meta = generate_synthetic(spec)
    corpus_path = os.path.join(out, "corpus.jsonl")
    store_path = os.path.join(out, "embeddings.emb")
    save_corpus(corpus_path, users)
    store.save(store_path)
    _write_json(os.path.join(out, "synth-meta.json"), meta)
    manifest["paths"]["corpus"] = corpus_path
    manifest["paths"]["embeddings"] = store_path
    manifest["synth"]["seed"] = seed
    _echo_manifest(manifest, out)
    print(f"wrote {corpus_path} ({len(users)} users) and {store_path} "
          f"({len(store)} vectors)")
    return 0


TRAIN_FLAGS = {
    "out": ("paths", "out_dir"), "corpus": ("paths", "corpus"),
    "embeddings": ("paths", "embeddings"), "seed": ("seed",),
    "d_model": ("model", "d_model"), "n_layers": ("model", "n_layers"),
    "n_heads": ("model", "n_heads"), "d_ff": ("model", "d_ff"),
    "dropout": ("model", "dropout_rate"),
    "k_posts": ("train", "k_posts"), "epochs": ("train", "epochs"),
    "batch_size": ("train", "effective_batch_size"),
    "lr_min": ("train", "lr_min"), "lr_max": ("train", "lr_max"),
    "cycle_epochs": ("train", "cycle_epochs"),
    "weight_decay": ("train", "weight_decay"),
    "val_fraction": ("train", "val_fraction"),
    "train_seed": ("train", "seed"),
}


def cmd_train(args):
    manifest = _resolve_manifest(args, TRAIN_FLAGS)
    out = _out_dir(manifest)
    users, store = _load_inputs(manifest)
    model_cfg = _model_config(manifest, store)
    train_cfg = _train_config(manifest)
    _echo_manifest(manifest, out)
    ckpt_path = os.path.join(out, "checkpoint.ckpt")
    state_path = os.path.join(out, "train-state.ckpt")
    log_path = os.path.join(out, "train-log.jsonl")
    if os.path.exists(log_path) and not args.resume:
        os.remove(log_path)  # logs append; a fresh run starts clean
    try:
        result = train(users, store, model_cfg, train_cfg,
                       resume_from=args.resume, log_path=log_path,
                       state_path=state_path)
    except NumericalError as e:
        if getattr(e, "last_good", None) is not None:
            params, epoch = e.last_good
            save_checkpoint(os.path.join(out, "last-good.ckpt"), model_cfg,
                            params, extra={"epoch": epoch, "diverged": True})
            print(f"training diverged; last good parameters (epoch {epoch}) "
                  f"saved to {out}/last-good.ckpt", file=sys.stderr)
        raise
    save_checkpoint(ckpt_path, model_cfg, result.best_params,
                    extra={"best_val_f1": result.best_val_f1,
                           "best_epoch": result.best_epoch})
    print(f"trained {train_cfg.epochs} epochs; best val F1 "
          f"{result.best_val_f1:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {ckpt_path}")
    return 0


def cmd_simulate(args):
    manifest = _resolve_manifest(args, {
        "out": ("paths", "out_dir"), "corpus": ("paths", "corpus"),
        "embeddings": ("paths", "embeddings"),
        "checkpoint": ("paths", "checkpoint"),
        "policy": ("policy", "variant"), "k_posts": ("policy", "k_posts"),
        "threshold": ("policy", "threshold"), "ig_steps": ("policy", "ig_steps"),
        "max_rounds": ("simulate", "max_rounds"),
        "snapshot_rounds": ("simulate", "snapshot_rounds"),
        "workers": ("simulate", "workers")})
    out = _out_dir(manifest)
    users, store = _load_inputs(manifest)
    model = SetModel.load(_require(manifest, "paths", "checkpoint", "--checkpoint"))
    policy = _policy(manifest)
    sim_cfg = manifest["simulate"]
    _echo_manifest(manifest, out)
    sim = run_simulation(users, store, policy, model,
                         max_rounds=sim_cfg["max_rounds"],
                         snapshot_rounds=tuple(sim_cfg["snapshot_rounds"]),
                         workers=sim_cfg["workers"])
    save_decision_log(os.path.join(out, "decisions.jsonl"), sim.events)
    save_outcomes(os.path.join(out, "outcomes.jsonl"), sim.outcomes)
    save_snapshots(os.path.join(out, "snapshots.json"), sim.snapshots)
    fired = sum(o["decision"] for o in sim.outcomes)
    print(f"simulated {sim.total_rounds} rounds over {len(users)} users; "
          f"{fired} fired; outputs in {out}")
    return 0


def cmd_evaluate(args):
    manifest = _resolve_manifest(args, {
        "out": ("paths", "out_dir"), "corpus": ("paths", "corpus"),
        "outcomes": ("evaluate", "outcomes"),
        "snapshots": ("evaluate", "snapshots"),
        "o_values": ("metrics", "o_values"), "c_fp": ("metrics", "c_fp"),
        "c_fn": ("metrics", "c_fn"), "c_tp": ("metrics", "c_tp"),
        "penalty_p": ("metrics", "penalty_p")})
    out = _out_dir(manifest)
    users, _ = _load_inputs(manifest, need_embeddings=False)
    outcomes = load_outcomes(_require(manifest, "evaluate", "outcomes", "--outcomes"))
    snap_path = manifest["evaluate"]["snapshots"]
    snapshots = load_snapshots(snap_path) if snap_path else None
    m = manifest["metrics"]
    labels = {u.user_id: u.label for u in users}
    report = evaluate_run(outcomes, labels, snapshots=snapshots,
                          o_values=tuple(m["o_values"]), c_fp=m["c_fp"],
                          c_fn=m["c_fn"], c_tp=m["c_tp"], p=m["penalty_p"])
    _echo_manifest(manifest, out)
    _write_json(os.path.join(out, "report.json"), report.to_dict())
    table = format_report(report)
    _write_text(os.path.join(out, "report.txt"), table)
    print(table, end="")
    return 0


def cmd_attribute(args):
    manifest = _resolve_manifest(args, {
        "out": ("paths", "out_dir"), "corpus": ("paths", "corpus"),
        "embeddings": ("paths", "embeddings"),
        "checkpoint": ("paths", "checkpoint"),
        "users": ("attribute", "users"), "window": ("attribute", "window"),
        "steps": ("attribute", "steps"), "top": ("attribute", "top")})
    out = _out_dir(manifest)
    users, store = _load_inputs(manifest)
    model = SetModel.load(_require(manifest, "paths", "checkpoint", "--checkpoint"))
    a = manifest["attribute"]
    by_id = {u.user_id: u for u in users}
    wanted = a["users"] or sorted(by_id)
    missing = [uid for uid in wanted if uid not in by_id]
    if missing:
        raise DataError(f"attribute: unknown user ids {missing}")
    _echo_manifest(manifest, out)

    def attribute_one(uid):
        user = by_id[uid]
        ts = select_top_k_posts(user, store, model.params, model.cfg,
                                k=a["window"], steps=a["steps"])
        result = integrated_gradients(ts, model.params, model.cfg,
                                      steps=a["steps"])
        return uid, result

    if args.workers and args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(attribute_one, wanted))
    else:
        results = [attribute_one(uid) for uid in wanted]

    records = []
    listing = []
    for uid, result in results:
        listing.append(f"user {uid}  (score = total attribution of the "
                       f"positive logit)")
        for rank, (pid, score) in enumerate(result.ranked(), start=1):
            records.append({"user_id": uid, "post_id": pid,
                            "score": score, "rank": rank})
            if rank <= a["top"]:
                listing.append(f"  {rank:>3}. {pid}  {score:+.6f}")
        listing.append("")
    report_path = os.path.join(out, "attributions.jsonl")
    _write_text(report_path, "".join(
        json.dumps(r, sort_keys=True) + "\n" for r in records))
    text = "\n".join(listing)
    _write_text(os.path.join(out, "attributions.txt"), text)
    print(text, end="")
    return 0


def cmd_ablate(args):
    manifest = _resolve_manifest(args, {
        "out": ("paths", "out_dir"), "corpus": ("paths", "corpus"),
        "seed": ("seed",), "k_grid": ("ablate", "k_grid"),
        "epochs": ("train", "epochs"),
        "batch_size": ("train", "effective_batch_size"),
        "lr_min": ("train", "lr_min"), "lr_max": ("train", "lr_max"),
        "cycle_epochs": ("train", "cycle_epochs"),
        "weight_decay": ("train", "weight_decay"),
        "val_fraction": ("train", "val_fraction"),
        "d_model": ("model", "d_model"), "n_layers": ("model", "n_layers"),
        "n_heads": ("model", "n_heads"), "d_ff": ("model", "d_ff"),
        "dropout": ("model", "dropout_rate")})
    if args.embeddings:
        manifest["ablate"]["stores"] = args.embeddings
    stores = manifest["ablate"]["stores"]
    if not stores:
        raise ConfigError("ablate needs at least one --embeddings store")
    out = _out_dir(manifest)
    users, _ = _load_inputs(manifest, need_embeddings=False)
    k_grid = list(manifest["ablate"]["k_grid"])
    base_seed = manifest["seed"]

    curves = {}
    for store_path in stores:
        store = EmbeddingStore.load(store_path)
        label = store.encoder_name
        model_manifest = _deep_merge(manifest, {})
        model_cfg = _model_config(model_manifest, store)
        curves[label] = {}
        for k in k_grid:
            cell_seed = int(stream(base_seed, "ablate", label, k).integers(2**31))
            cell = dict(manifest["train"])
            cell["k_posts"] = k
            cell["seed"] = cell_seed
            result = train(users, store, model_cfg, TrainConfig.from_dict(cell))
            curves[label][str(k)] = {
                "val_f1": [rec["val_f1"] for rec in result.log],
                "best_val_f1": result.best_val_f1,
                "best_epoch": result.best_epoch,
                "seed": cell_seed,
            }
            print(f"[{label}] K={k:>4}  best val F1 {result.best_val_f1:.4f} "
                  f"(epoch {result.best_epoch})")
    manifest["train"]["seed"] = None  # per-cell seeds recorded in curves
    _echo_manifest(manifest, out)
    _write_json(os.path.join(out, "ablation.json"), curves)

    width = max(len(lbl) for lbl in curves)
    lines = ["ablation: best validation F1 per store x K",
             " ".join(["store".ljust(width)] + [f"K={k:>4}" for k in k_grid])]
    for label in sorted(curves):
        row = [label.ljust(width)]
        row += [f"{curves[label][str(k)]['best_val_f1']:6.3f}" for k in k_grid]
        lines.append(" ".join(row))
    table = "\n".join(lines) + "\n"
    _write_text(os.path.join(out, "ablation.txt"), table)
    print(table, end="")
    return 0


# ----------------------------------------------------------------- parser


def _add_manifest_and_out(p):
    p.add_argument("--manifest", help="JSON manifest supplying any settings")
    p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV})")


def _int_list(text):
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def build_parser():
    parser = _Parser(prog="setrisk",
                     description="set-transformer early-risk pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command",
                               parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-synth",
                       help="generate a planted-signal synthetic corpus")
    _add_manifest_and_out(p)
    p.add_argument("--n-pos", dest="n_pos", type=int)
    p.add_argument("--n-neg", dest="n_neg", type=int)
    p.add_argument("--posts-min", dest="posts_min", type=int)
    p.add_argument("--posts-max", dest="posts_max", type=int)
    p.add_argument("--signal-rate", dest="signal_rate", type=float)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--dimension", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train the set classifier")
    _add_manifest_and_out(p)
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--resume", help="training state file to continue from")
    p.add_argument("--seed", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--k-posts", dest="k_posts", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--lr-max", dest="lr_max", type=float)
    p.add_argument("--cycle-epochs", dest="cycle_epochs", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--train-seed", dest="train_seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate",
                       help="stream the corpus through a decision policy")
    _add_manifest_and_out(p)
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=("recent-k", "ig-selected-k", "post-level"))
    p.add_argument("--k-posts", dest="k_posts", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--ig-steps", dest="ig_steps", type=int)
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--snapshot-rounds", dest="snapshot_rounds", type=_int_list)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate",
                       help="score a simulation run against true labels")
    _add_manifest_and_out(p)
    p.add_argument("--outcomes", help="outcomes.jsonl from a simulate run")
    p.add_argument("--snapshots", help="snapshots.json for ranking metrics")
    p.add_argument("--corpus", help="corpus supplying true labels")
    p.add_argument("--o-values", dest="o_values", type=_int_list)
    p.add_argument("--c-fp", dest="c_fp", type=float)
    p.add_argument("--c-fn", dest="c_fn", type=float)
    p.add_argument("--c-tp", dest="c_tp", type=float)
    p.add_argument("--penalty-p", dest="penalty_p", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attribute",
                       help="rank a user's posts by integrated-gradients score")
    _add_manifest_and_out(p)
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--checkpoint")
    p.add_argument("--users", nargs="+", help="user ids (default: all)")
    p.add_argument("--window", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--top", type=int, help="rows per user in the text listing")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("ablate",
                       help="sweep set size K across encoder stores")
    _add_manifest_and_out(p)
    p.add_argument("--corpus")
    p.add_argument("--embeddings", action="append",
                   help="embedding store; repeat for several encoders")
    p.add_argument("--k-grid", dest="k_grid", type=_int_list)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-min", dest="lr_min", type=float)
    p.add_argument("--lr-max", dest="lr_max", type=float)
    p.add_argument("--cycle-epochs", dest="cycle_epochs", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--dropout", type=float)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"setrisk: configuration error: {e}", file=sys.stderr)
        return 1
    except (DataError, ShapeError, OSError) as e:
        print(f"setrisk: data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"setrisk: numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
