"""Command-line entry point: ``sprint {train,select,eval,stats,synth,attn-demo}``.

Option precedence is command-line flag > ``--config`` file > built-in
default. A config file is either a flat TOML file of ``option = value``
pairs (option names with underscores) or a run manifest written by an
earlier invocation, which makes ``sprint <cmd> --config out.manifest.json``
a replay of that run.

Exit codes: 0 ok, 2 usage, 3 parse, 4 align, 5 numeric/diverge, 6 io.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attention import AttentionConfig, attn_demo
from .errors import ArtifactIOError, ParseError, SprintError
from .evaluation import FixedPolicy, OraclePolicy, RandomHeadsPolicy, SprintPolicy, evaluate
from .features import align_features, load_features, save_features
from .model_io import model_to_bytes, load_model
from .outcomes import format_outcomes, gain_stats, load_catalog, load_outcomes, save_catalog
from .seeding import derive_seed
from .selector import select, select_top_n
from .synthetic import SynthSpec, generate_synthetic, split_indices
from .trainer import OPTIMIZERS, TrainConfig, train

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("sprint")

POLICIES = ("sprint", "random", "oracle", "greedy")
_CONFIG_DEFAULTS = TrainConfig()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path, data) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(data)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


def write_manifest(path, command: str, options: dict, inputs, outputs, started: float) -> None:
    manifest = {
        "command": command,
        "options": options,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "seed": options.get("seed"),
        "tool_version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    _write(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_config(path) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read config {path}: {exc}") from exc
    if raw.lstrip().startswith(b"{"):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return dict(data.get("options", data))
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


# -- subcommands -------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lam=args.lam, learning_rate=args.learning_rate, steps=args.steps,
        batch_size=args.batch_size, seed=args.seed, radius=args.radius,
        optimizer=args.optimizer, beta1=args.beta1, beta2=args.beta2, eps=args.eps,
        momentum=args.momentum, embedding_dim=args.embedding_dim,
        init_std=args.init_std, log_every=args.log_every,
    )


def _load_aligned(outcomes_path, features_path, catalog_path=None):
    catalog = load_catalog(catalog_path) if catalog_path else None
    outcomes, catalog = load_outcomes(outcomes_path, catalog)
    ids, F = load_features(features_path)
    return outcomes, catalog, align_features(outcomes.question_ids, ids, F)


def cmd_train(args, options, started) -> int:
    cfg = _train_config(args)
    outcomes, catalog, F = _load_aligned(args.outcomes, args.features, args.catalog)
    model = train(outcomes, F, catalog, cfg)
    _write(args.output, model_to_bytes(model))
    inputs = [p for p in (args.outcomes, args.features, args.catalog) if p]
    write_manifest(f"{args.output}.manifest.json", "train", options, inputs, [args.output], started)
    first, last = model.loss_trace[0][1], model.loss_trace[-1][1]
    print(f"trained {cfg.steps} steps on {outcomes.n - model.n_excluded} questions "
          f"({model.n_excluded} excluded); loss {first:.6f} -> {last:.6f}; wrote {args.output}")
    return 0


def cmd_select(args, options, started) -> int:
    model = load_model(args.model)
    ids, F = load_features(args.features)
    lines = []
    for qid, x in zip(ids, F):
        top = select_top_n(model, x, args.top_n)
        ranked = select(model, x).ranked[: len(top.heads)]
        lines.append(json.dumps({
            "id": qid,
            "ranked": [{"j": r.j, "layer": r.layer, "head": r.head, "distance": r.squared_distance} for r in ranked],
            "clamped": top.clamped,
        }))
    if args.top_n > len(model.catalog):
        log.warning("top-n %d exceeds %d heads; lists clamped", args.top_n, len(model.catalog))
    text = "\n".join(lines) + "\n"
    if args.output:
        _write(args.output, text)
        write_manifest(f"{args.output}.manifest.json", "select", options,
                       [args.model, args.features], [args.output], started)
    else:
        sys.stdout.write(text)
    return 0


def _parse_policies(text: str, parser) -> list:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in POLICIES]
    if bad or not names:
        parser.error(f"unknown policy {', '.join(bad) or '(none)'}; valid policies: {', '.join(POLICIES)}")
    return names


def cmd_eval(args, options, started, parser) -> int:
    names = _parse_policies(args.policies, parser)
    if args.n_max < 1 or args.seeds < 1:
        parser.error("--n-max and --seeds must be >= 1")
    model = load_model(args.model)
    outcomes, catalog, F = _load_aligned(args.outcomes, args.features)
    if catalog.to_json() != model.catalog.to_json():
        raise ParseError("outcome head columns do not match the model's head catalog")
    lh = len(catalog)
    pool_size = args.pool_size or lh
    if not 1 <= pool_size <= lh:
        parser.error(f"--pool-size must lie in 1..{lh}")
    ranking = list(model.greedy_ranking) or list(range(lh))
    policies = []
    for name in names:
        if name == "sprint":
            policies.append(SprintPolicy(model))
        elif name == "random":
            seeds = tuple(derive_seed(args.seed, f"eval/{k}") for k in range(args.seeds))
            policies.append(RandomHeadsPolicy(tuple(ranking[:pool_size]), seeds, args.random_mode))
        elif name == "oracle":
            policies.append(OraclePolicy())
        else:
            policies.append(FixedPolicy(tuple(ranking), name="greedy"))
    report = evaluate(policies, outcomes, F, args.n_max)
    json_path, csv_path = f"{args.output}.json", f"{args.output}.csv"
    _write(json_path, report.to_json() + "\n")
    _write(csv_path, report.plot_csv())
    write_manifest(f"{args.output}.manifest.json", "eval", options,
                   [args.model, args.outcomes, args.features], [json_path, csv_path], started)
    print(report.table())
    return 0


def cmd_stats(args, options, started) -> int:
    catalog = load_catalog(args.catalog) if args.catalog else None
    outcomes, catalog = load_outcomes(args.outcomes, catalog)
    report = gain_stats(outcomes, catalog, group_by=args.group_by)

    def to_csv(rows):
        if not rows:
            return ""
        keys = list(rows[0])
        lines = [",".join(keys)]
        lines += [",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys) for r in rows]
        return "\n".join(lines) + "\n"

    summary, violin = report.summary_rows(), report.violin_rows()
    paths = [f"{args.output}_summary.csv", f"{args.output}_violin.csv"]
    _write(paths[0], to_csv(summary))
    _write(paths[1], to_csv(violin))
    inputs = [p for p in (args.outcomes, args.catalog) if p]
    write_manifest(f"{args.output}.manifest.json", "stats", options, inputs, paths, started)
    print(f"{'group':<24} {'n':>5} {'base':>7} {'best':>7} {'head':>8} {'gain':>8}")
    for r in summary:
        head = f"L{r['best_layer']}H{r['best_head']}"
        print(f"{r['group']:<24} {r['n']:>5} {r['baseline_accuracy']:>7.4f} "
              f"{r['best_accuracy']:>7.4f} {head:>8} {r['gain']:>+8.4f}")
    return 0


def cmd_synth(args, options, started) -> int:
    spec = SynthSpec(
        clusters=args.clusters, heads=args.heads, feature_dim=args.features_dim,
        p_hi=args.p_hi, p_lo=args.p_lo, n=args.n, seed=args.seed, layers=args.layers,
        center_scale=args.center_scale, spread=args.spread, p_base=args.p_base,
    )
    outcomes, F, catalog, truth = generate_synthetic(spec)
    out = Path(args.out_dir)
    written = []

    def dump(name, rows):
        sub = outcomes.subset(rows)
        csv_path, jsonl_path = out / f"{name}.csv", out / f"{name}.jsonl"
        _write(csv_path, format_outcomes(sub, catalog))
        save_features(jsonl_path, sub.question_ids, F[rows])
        written.extend([csv_path, jsonl_path])

    if args.test_fraction > 0:
        train_rows, test_rows = split_indices(spec.n, args.test_fraction, args.seed)
        dump("train", train_rows)
        dump("test", test_rows)
    else:
        dump("outcomes", np.arange(spec.n))
    save_catalog(catalog, out / "catalog.json")
    _write(out / "truth.json", json.dumps({
        "spec": spec.to_dict(),
        "dedicated_head": truth.dedicated_head.tolist(),
        "cluster_of": dict(zip(outcomes.question_ids, truth.cluster_of.tolist())),
    }, sort_keys=True) + "\n")
    written += [out / "catalog.json", out / "truth.json"]
    write_manifest(out / "synth.manifest.json", "synth", options, [], written, started)
    print(f"wrote {len(written)} files to {out}")
    return 0


def cmd_attn_demo(args, options, started) -> int:
    model_dim = args.model_dim if args.model_dim is not None else args.heads * args.head_dim
    cfg = AttentionConfig(args.heads, args.head_dim, model_dim, args.seq_len)
    print(attn_demo(cfg, args.seed))
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="sprint", description="Attention-head pruning selection toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.add_argument("--config", default=None, help="TOML option file or run manifest to take defaults from")
        return p

    d = _CONFIG_DEFAULTS
    p = add("train", "Train head and question embeddings on an outcome matrix.")
    p.add_argument("--outcomes", required=True, help="outcome CSV")
    p.add_argument("--features", required=True, help="question features JSONL")
    p.add_argument("--catalog", default=None, help="optional head catalog JSON to check against the CSV header")
    p.add_argument("--output", default="model.sprint", help="model file to write")
    p.add_argument("--lam", type=float, default=d.lam, help="diversity regularizer weight")
    p.add_argument("--learning-rate", type=float, default=d.learning_rate, help="optimizer step size")
    p.add_argument("--steps", type=int, default=d.steps, help="number of mini-batch steps")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="questions per step")
    p.add_argument("--seed", type=int, default=d.seed, help="master random seed")
    p.add_argument("--radius", type=float, default=d.radius, help="projection radius for head embeddings")
    p.add_argument("--optimizer", choices=OPTIMIZERS, default=d.optimizer, help="first-order optimizer")
    p.add_argument("--beta1", type=float, default=d.beta1, help="adam first-moment decay")
    p.add_argument("--beta2", type=float, default=d.beta2, help="adam second-moment decay")
    p.add_argument("--eps", type=float, default=d.eps, help="adam epsilon")
    p.add_argument("--momentum", type=float, default=d.momentum, help="sgd_momentum coefficient")
    p.add_argument("--embedding-dim", type=int, default=d.embedding_dim, help="embedding dimension p")
    p.add_argument("--init-std", type=float, default=d.init_std, help="std of the Gaussian initialization")
    p.add_argument("--log-every", type=int, default=d.log_every, help="record full loss every k steps")

    p = add("select", "Rank heads to prune for each question.")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--features", required=True, help="question features JSONL")
    p.add_argument("--top-n", type=int, default=1, help="number of heads to report per question")
    p.add_argument("--output", default=None, help="write JSON lines here instead of stdout")

    p = add("eval", "Pass@N of selection policies on a test split.")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--outcomes", required=True, help="test outcome CSV")
    p.add_argument("--features", required=True, help="test features JSONL")
    p.add_argument("--n-max", type=int, default=8, help="largest N to evaluate")
    p.add_argument("--policies", default="sprint,random,oracle", help=f"comma list from {','.join(POLICIES)}")
    p.add_argument("--seeds", type=int, default=30, help="number of random-baseline seeds")
    p.add_argument("--seed", type=int, default=0, help="master seed for the random baseline")
    p.add_argument("--pool-size", type=int, default=None, help="random-baseline pool: top-k of the greedy ranking, all heads when omitted")
    p.add_argument("--random-mode", choices=("per_question", "per_run"), default="per_question", help="random draw granularity")
    p.add_argument("--output", default="report", help="output prefix for .json/.csv report files")

    p = add("stats", "Best-pruned-head gain over the unpruned baseline.")
    p.add_argument("--outcomes", required=True, help="outcome CSV with a 'base' column")
    p.add_argument("--catalog", default=None, help="optional head catalog JSON")
    p.add_argument("--group-by", choices=("subject", "none"), default="subject", help="grouping of questions")
    p.add_argument("--output", default="gains", help="output prefix for the CSV files")

    s = SynthSpec()
    p = add("synth", "Write a clustered synthetic fixture.")
    p.add_argument("--clusters", type=int, default=s.clusters, help="number of clusters K")
    p.add_argument("--heads", type=int, default=s.heads, help="total number of heads LH")
    p.add_argument("--layers", type=int, default=s.layers, help="layers the heads are spread over")
    p.add_argument("--features-dim", type=int, default=s.feature_dim, help="feature dimension f")
    p.add_argument("--n", type=int, default=s.n, help="number of questions")
    p.add_argument("--p-hi", type=float, default=s.p_hi, help="dedicated-head success probability")
    p.add_argument("--p-lo", type=float, default=s.p_lo, help="background success probability")
    p.add_argument("--p-base", type=float, default=s.p_base, help="unpruned baseline success probability (omit for no base column)")
    p.add_argument("--center-scale", type=float, default=s.center_scale, help="std of cluster centers")
    p.add_argument("--spread", type=float, default=s.spread, help="within-cluster std")
    p.add_argument("--seed", type=int, default=s.seed, help="master seed")
    p.add_argument("--test-fraction", type=float, default=0.2, help="held-out fraction (0 writes a single split)")
    p.add_argument("--out-dir", default="synth", help="output directory")

    p = add("attn-demo", "Compare the two pruning implementations on random weights.")
    p.add_argument("--heads", type=int, default=4, help="number of heads H")
    p.add_argument("--head-dim", type=int, default=8, help="per-head dimension d")
    p.add_argument("--seq-len", type=int, default=5, help="sequence length T")
    p.add_argument("--model-dim", type=int, default=None, help="model dimension, H*d when omitted")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    return parser


_HANDLERS = {
    "train": cmd_train, "select": cmd_select, "stats": cmd_stats,
    "synth": cmd_synth, "attn-demo": cmd_attn_demo,
}


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> None:
    """Install config-file values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if a in subparsers), None)
    if command is None:
        return
    subparser = subparsers[command]
    values = load_config(known.config)
    values.pop("config", None)
    dests = {a.dest for a in subparser._actions}
    unknown = sorted(set(values) - dests)
    if unknown:
        subparser.error(f"unknown option(s) in {known.config}: {', '.join(unknown)}")
    subparser.set_defaults(**values)
    for action in subparser._actions:
        if action.dest in values:
            action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except SprintError as exc:
        print(f"sprint: error: {exc}", file=sys.stderr)
        return exc.exit_code
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    options = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "verbose", "command")}
    started = time.perf_counter()
    try:
        if args.command == "eval":
            subparser = parser._subparsers._group_actions[0].choices["eval"]
            return cmd_eval(args, options, started, subparser)
        return _HANDLERS[args.command](args, options, started)
    except SprintError as exc:
        print(f"sprint {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except ValueError as exc:
        print(f"sprint {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sprint {args.command}: io error: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
