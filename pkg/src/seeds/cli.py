"""Command-line entry points: benchmark generation, training, synthesis, selection,
classifier training, evaluation, export, and the chained run-all."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import io
from .benchmark import BenchmarkSpec, gen_benchmark
from .classifier import (
    ClassifierHead, harmonic_mean, merge_and_evaluate, train_unseen_classifier,
)
from .config import RunConfig, check_checkpoint_config, load_config, serialize_config
from .pipeline import (
    SynthesizerState, decode_class_ids, encode_class_ids, init_synthesizer, select_features,
    synthesize_unseen, train_epochs,
)

log = logging.getLogger("seeds")

CHECKPOINT_NAME = "checkpoint.ckpt"
UNSEEN_HEAD_NAME = "unseen_head.ckpt"


def _data_paths(data_dir: Path) -> dict[str, Path]:
    return {
        "seen_train": data_dir / "seen_train.fb",
        "seen_test": data_dir / "seen_test.fb",
        "unseen_test": data_dir / "unseen_test.fb",
        "seen_vectors": data_dir / "classes_seen.vec",
        "unseen_vectors": data_dir / "classes_unseen.vec",
        "ingredients": data_dir / "corpus_ingredient.vec",
        "cuisines": data_dir / "corpus_cuisine.vec",
        "classes": data_dir / "classes.txt",
    }


def _benchmark_spec(cfg: RunConfig) -> BenchmarkSpec:
    return BenchmarkSpec(
        ingredients=cfg.ingredients, cuisines=cfg.cuisines,
        feature_dim=cfg.d, semantic_dim=cfg.s, modes_per_class=cfg.modes_per_class,
        train_per_class=cfg.train_per_class, test_per_class=cfg.test_per_class,
        noise_sigma=cfg.noise_sigma, seed=cfg.seed,
    )


def _load_inputs(cfg: RunConfig, data_dir: Path):
    paths = _data_paths(data_dir)
    for key in ("seen_train", "seen_vectors", "unseen_vectors", "ingredients", "cuisines", "classes"):
        if not paths[key].exists():
            raise FileNotFoundError(f"missing input {paths[key]}; run gen-benchmark first")
    table = io.load_semantic_table(paths["seen_vectors"], paths["unseen_vectors"])
    names, seen_ids, unseen_ids = io.load_classes(paths["classes"])
    if tuple(seen_ids) != table.seen or tuple(unseen_ids) != table.unseen:
        raise ValueError(f"{paths['classes']} class split disagrees with the embedding files")
    ingredient_corpus = io.load_corpus(paths["ingredients"], "ingredient")
    cuisine_corpus = io.load_corpus(paths["cuisines"], "cuisine")
    seen_train = io.bank_to_dataset(io.load_feature_bank(paths["seen_train"]), "seen-train")
    return table, names, ingredient_corpus, cuisine_corpus, seen_train, paths


def _restore_state(cfg: RunConfig, ckpt_path: Path, data_dir: Path) -> SynthesizerState:
    config_text, arrays = io.load_checkpoint(ckpt_path)
    for warning in check_checkpoint_config(cfg, config_text):
        log.warning("%s", warning)
    table, names, ing, cui, seen_train, _ = _load_inputs(cfg, data_dir)
    if seen_train.dim != cfg.d:
        raise ValueError(f"feature bank width {seen_train.dim} does not match dims.d={cfg.d}")
    state = init_synthesizer(seen_train, table, ing, cui, names, cfg.train_settings())
    state.load_arrays(arrays)
    return state


def _save_state(cfg: RunConfig, state: SynthesizerState, path: Path) -> None:
    io.save_checkpoint(path, serialize_config(cfg), state.named_arrays())


def _save_head(cfg: RunConfig, head: ClassifierHead, path: Path) -> None:
    arrays = {
        "head.unseen.w": head.weights,
        "head.unseen.b": head.bias,
        "head.unseen.classes": encode_class_ids(head.class_ids),
    }
    io.save_checkpoint(path, serialize_config(cfg), arrays)


def _load_head(path: Path) -> ClassifierHead:
    _, arrays = io.load_checkpoint(path)
    return ClassifierHead(decode_class_ids(arrays["head.unseen.classes"]),
                          arrays["head.unseen.w"], arrays["head.unseen.b"])


def cmd_gen_benchmark(cfg: RunConfig, args) -> str:
    bench = gen_benchmark(_benchmark_spec(cfg))
    data_dir = Path(cfg.data_dir)
    paths = _data_paths(data_dir)
    io.save_feature_bank(paths["seen_train"], io.dataset_to_bank(bench.seen_train))
    io.save_feature_bank(paths["seen_test"], io.dataset_to_bank(bench.seen_test))
    io.save_feature_bank(paths["unseen_test"], io.dataset_to_bank(bench.unseen_test))
    io.save_semantic_table(paths["seen_vectors"], paths["unseen_vectors"], bench.table)
    io.write_embeddings(paths["ingredients"], bench.ingredient_corpus.tokens,
                        bench.ingredient_corpus.vectors)
    io.write_embeddings(paths["cuisines"], bench.cuisine_corpus.tokens,
                        bench.cuisine_corpus.vectors)
    io.save_classes(paths["classes"], bench.table, bench.class_names)
    return (f"benchmark written to {data_dir}: {len(bench.table.seen)} seen / "
            f"{len(bench.table.unseen)} unseen classes, d={cfg.d}")


def cmd_train(cfg: RunConfig, args) -> str:
    table, names, ing, cui, seen_train, _ = _load_inputs(cfg, Path(cfg.data_dir))
    if seen_train.dim != cfg.d:
        raise ValueError(f"feature bank width {seen_train.dim} does not match dims.d={cfg.d}")
    out_dir = Path(cfg.out_dir)
    if args.resume:
        state = _restore_state(cfg, out_dir / CHECKPOINT_NAME, Path(cfg.data_dir))
    else:
        state = init_synthesizer(seen_train, table, ing, cui, names, cfg.train_settings())
    curve = train_epochs(state, seen_train, cfg.loss_weights(), args.epochs
                         if args.epochs is not None else cfg.epochs)
    _save_state(cfg, state, out_dir / CHECKPOINT_NAME)
    io.save_loss_curve(out_dir / "losses.csv", curve)
    final = curve[-1]["l_total"] if curve else float("nan")
    return (f"trained to epoch {state.epochs_done} (final total loss {final:.4f}); "
            f"checkpoint at {out_dir / CHECKPOINT_NAME}")


def cmd_synthesize(cfg: RunConfig, args) -> str:
    out_dir = Path(cfg.out_dir)
    state = _restore_state(cfg, out_dir / CHECKPOINT_NAME, Path(cfg.data_dir))
    bank = synthesize_unseen(state, args.per_class or cfg.per_class_count)
    io.save_feature_bank(out_dir / "synth.fb", bank)
    counts = bank.per_class_counts
    return f"synthesized {sum(counts.values())} features ({len(counts)} classes) to {out_dir / 'synth.fb'}"


def cmd_select(cfg: RunConfig, args) -> str:
    out_dir = Path(cfg.out_dir)
    bank = io.load_feature_bank(out_dir / "synth.fb")
    selected = select_features(bank, cfg.sampling_config())
    io.save_feature_bank(out_dir / "selected.fb", selected)
    return (f"kept {cfg.clusters}x{cfg.per_cluster} features per class "
            f"-> {out_dir / 'selected.fb'}")


def cmd_train_classifier(cfg: RunConfig, args) -> str:
    out_dir = Path(cfg.out_dir)
    selected = io.load_feature_bank(out_dir / "selected.fb")
    head = train_unseen_classifier(selected, seed=cfg.seed)
    _save_head(cfg, head, out_dir / UNSEEN_HEAD_NAME)
    return f"unseen classifier over {len(head.class_ids)} classes -> {out_dir / UNSEEN_HEAD_NAME}"


def cmd_eval(cfg: RunConfig, args) -> str:
    out_dir = Path(cfg.out_dir)
    state = _restore_state(cfg, out_dir / CHECKPOINT_NAME, Path(cfg.data_dir))
    head = _load_head(out_dir / UNSEEN_HEAD_NAME)
    paths = _data_paths(Path(cfg.data_dir))
    seen_test = io.bank_to_dataset(io.load_feature_bank(paths["seen_test"]), "seen-test")
    unseen_test = io.bank_to_dataset(io.load_feature_bank(paths["unseen_test"]), "unseen-test")
    report = merge_and_evaluate(state.seen_head, head, seen_test, unseen_test)
    io.atomic_write_text(out_dir / "report.txt", report.to_text())
    io.atomic_write_text(out_dir / "report.csv", report.to_csv())
    return (f"zsd_unseen={report.zsd_unseen:.2f} gzsd_seen={report.gzsd_seen:.2f} "
            f"gzsd_unseen={report.gzsd_unseen:.2f} hm={report.hm:.2f} -> {out_dir / 'report.txt'}")


def cmd_run_all(cfg: RunConfig, args) -> str:
    messages = [cmd_gen_benchmark(cfg, args)]
    messages.append(cmd_train(cfg, args))
    messages.append(cmd_synthesize(cfg, args))
    messages.append(cmd_select(cfg, args))
    messages.append(cmd_train_classifier(cfg, args))
    messages.append(cmd_eval(cfg, args))
    return "\n".join(messages)


def cmd_export(cfg: RunConfig, args) -> str:
    src, dst = Path(args.source), Path(args.dest)
    if args.to == "csv":
        io.bank_to_csv(dst, io.load_feature_bank(src))
    else:
        io.save_feature_bank(dst, io.bank_from_csv(src))
    return f"exported {src} -> {dst}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seeds",
        description="Zero-shot feature synthesis: benchmark, train, synthesize, select, evaluate.")
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument("--data-dir", help="override paths.data_dir")
    parser.add_argument("--out-dir", help="override paths.out_dir")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-benchmark", help="generate the compositional benchmark files")
    p_train = sub.add_parser("train", help="train the synthesizer and write a checkpoint")
    p_train.add_argument("--epochs", type=int, help="override train.epochs")
    p_train.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    p_synth = sub.add_parser("synthesize", help="sample unseen-class features from the checkpoint")
    p_synth.add_argument("--per-class", type=int, help="override sampling.per_class_count")
    sub.add_parser("select", help="k-means selection of representative features")
    sub.add_parser("train-classifier", help="train the unseen softmax head")
    p_eval = sub.add_parser("eval", help="merge heads and score; or --hm A B for the metric alone")
    p_eval.add_argument("--hm", nargs=2, type=float, metavar=("SEEN", "UNSEEN"),
                        help="print the harmonic mean of two scores and exit")
    p_run = sub.add_parser("run-all", help="chain every stage end to end")
    p_run.add_argument("--epochs", type=int, help="override train.epochs")
    p_export = sub.add_parser("export", help="convert a feature bank between binary and CSV")
    p_export.add_argument("source")
    p_export.add_argument("dest")
    p_export.add_argument("--to", choices=("csv", "binary"), default="csv")
    return parser


COMMANDS = {
    "gen-benchmark": cmd_gen_benchmark,
    "train": cmd_train,
    "synthesize": cmd_synthesize,
    "select": cmd_select,
    "train-classifier": cmd_train_classifier,
    "eval": cmd_eval,
    "run-all": cmd_run_all,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    defaults = argparse.Namespace(epochs=None, resume=False, per_class=None, hm=None)
    for key, value in vars(defaults).items():
        if not hasattr(args, key):
            setattr(args, key, value)
    try:
        if args.command == "eval" and args.hm is not None:
            print(f"{harmonic_mean(args.hm[0], args.hm[1]):.1f}")
            return 0
        cfg = load_config(args.config)
        if args.data_dir:
            cfg.data_dir = args.data_dir
        if args.out_dir:
            cfg.out_dir = args.out_dir
        if args.seed is not None:
            cfg.seed = args.seed
        print(COMMANDS[args.command](cfg, args))
        return 0
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
