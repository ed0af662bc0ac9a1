"""Command-line entry point.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are the long flag names (``beam-width = 16`` or ``beam_width = 16``);
``#`` starts a comment. Flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
import time
from collections.abc import Sequence
from importlib import metadata
from pathlib import Path


from specretro import corpus
from specretro.decode import DecodeConfig, Retrosynthesizer, Strategy, generate
from specretro.harness.bench import NamedPlanConfig, bench_multi_step, bench_single_step, decode_config_for
from specretro.harness.reports import render_multi, render_single, write_report
from specretro.model import ModelConfig, TrainSchedule, load, save, train
from specretro.plan import PlanConfig, plan
from specretro.smiles_tok import Vocabulary, build_vocab

logger = logging.getLogger("specretro")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # one-line diagnostics
        raise CliError(message)


def version_string() -> str:
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0.0.0"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{base}+g{rev}" if rev else base


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(directory: Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    snapshot = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "config": snapshot,
        "seed": snapshot.get("seed"),
        "version": version_string(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    ckpt = getattr(args, "checkpoint", None)
    if ckpt is not None and Path(ckpt).exists():
        manifest["checkpoint_sha256"] = _sha256(Path(ckpt))
    manifest.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def read_config_file(path: Path) -> dict[str, str]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise CliError(f"--config: cannot read {path}: {err.strerror}") from err
    values = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"--config: {path}:{n}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _existing(flag: str, value: Path | None) -> Path:
    if value is None:
        raise CliError(f"{flag} is required")
    if not value.exists():
        raise CliError(f"{flag}: no such file: {value}")
    return value


def _load_model(args: argparse.Namespace):
    ckpt = _existing("--checkpoint", args.checkpoint)
    vocab_path = args.vocab if args.vocab is not None else ckpt.with_name("vocab.txt")
    vocab = Vocabulary.load(_existing("--vocab", vocab_path))
    return load(ckpt, vocab.sha256), vocab


def _csv_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


# --- subcommands -------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = corpus.GrammarConfig(n_pairs=args.n_pairs, seed=args.seed, max_depth=args.max_depth)
    dataset = corpus.gen_synthetic(cfg)
    dataset.write(args.out)
    vocab = build_vocab([p.product for p in dataset.train] + [p.reactants for p in dataset.train] + dataset.stock)
    vocab.save(args.out / "vocab.txt")
    targets = corpus.gen_targets(cfg, args.n_targets, seed=args.seed + 1, exclude=[p.product for p in dataset.train])
    (args.out / "targets.txt").write_text("".join(f"{t}\n" for t, _ in targets), encoding="utf-8")
    print(f"wrote {len(dataset.train)}/{len(dataset.valid)}/{len(dataset.test)} pairs to {args.out}")
    return 0


def _pairs(vocab: Vocabulary, pairs) -> list[tuple[list[int], list[int]]]:
    return [(vocab.encode(p.product), vocab.encode(p.reactants)) for p in pairs]


def cmd_train(args: argparse.Namespace) -> int:
    data = _existing("--data", args.data)
    vocab = Vocabulary.load(_existing("--vocab", args.vocab or data / "vocab.txt"))
    train_pairs, _ = corpus.load_reactions(data / "train.tsv")
    valid_pairs, _ = corpus.load_reactions(data / "valid.tsv")
    config = ModelConfig.toy(
        len(vocab), medusa_heads=args.medusa_heads, d_model=args.d_model, seed=args.seed,
        layers_enc=args.layers, layers_dec=args.layers,
    )
    schedule = TrainSchedule(
        epochs=args.epochs, max_steps=args.max_steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed
    )
    model, log = train(_pairs(vocab, train_pairs), config, schedule, heldout=_pairs(vocab, valid_pairs[:500]))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    digest = save(model, args.out, vocab.sha256)
    vocab.save(args.out.with_name("vocab.txt"))
    log.write_csv(args.out.with_suffix(".log.csv"))
    write_manifest(args.out.parent, "train", args, {"checkpoint_sha256": digest, "train_wall_time": log.wall_time})
    print(f"saved {args.out} ({log.steps[-1] if log.steps else 0} steps, {log.wall_time:.1f}s)")
    return 0


def _decode_config(args: argparse.Namespace, model, batch_size: int) -> DecodeConfig:
    overrides = {"nucleus": args.nucleus, "max_len": args.max_len}
    if args.draft_len is not None:
        overrides["draft_len"] = args.draft_len
    if args.n_drafts is not None:
        overrides["n_drafts"] = args.n_drafts
    return decode_config_for(args.strategy, batch_size, args.beams, model, **overrides)


def cmd_decode(args: argparse.Namespace) -> int:
    model, vocab = _load_model(args)
    molecules = list(args.smiles)
    if args.input is not None:
        molecules += corpus.load_lines(_existing("--input", args.input))
    if not molecules:
        raise CliError("no input molecules (give SMILES arguments or --input)")
    config = _decode_config(args, model, args.batch_size)
    lines = []
    metrics = None
    for i in range(0, len(molecules), args.batch_size):
        chunk = molecules[i : i + args.batch_size]
        hyps, m = generate(model, [vocab.encode(s) for s in chunk], config)
        metrics = m if metrics is None else metrics.merge(m)
        for h in hyps:
            lines.append("\t".join(f"{vocab.decode(x.tokens)}\t{x.logp:.6f}" for x in h))
    out = "\n".join(lines) + "\n"
    if args.output is not None:
        args.output.write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    record = json.dumps({"strategy": config.strategy.value, **metrics.to_dict()}, sort_keys=True)
    if args.out_dir is not None:
        write_manifest(args.out_dir, "decode", args)
        (args.out_dir / "metrics.json").write_text(record + "\n", encoding="utf-8")
    else:
        print(record, file=sys.stderr)
    return 0


def _predictor_factory(args: argparse.Namespace, model, vocab: Vocabulary):
    config = _decode_config(args, model, args.beam_width)

    def make() -> Retrosynthesizer:
        return Retrosynthesizer(model, vocab, config)

    return make


def cmd_plan(args: argparse.Namespace) -> int:
    model, vocab = _load_model(args)
    stock = corpus.load_stock(_existing("--stock", args.stock))
    targets = list(args.target)
    if args.targets is not None:
        targets += corpus.load_lines(_existing("--targets", args.targets))
    if not targets:
        raise CliError("no targets (give --target or --targets)")
    config = PlanConfig(
        max_depth=args.max_depth,
        max_iterations=args.max_iterations,
        time_limit=args.time_limit,
        expansions=args.beams,
        beam_width=args.beam_width,
        algorithm=args.algo,
    )
    predictor = _predictor_factory(args, model, vocab)()
    out_dir = args.out_dir
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for n, target in enumerate(targets):
        res = plan(target, predictor, stock, config)
        rows.append((target, res))
        status = "solved" if res.solved else "unsolved"
        print(f"{target}\t{status}\t{res.iterations}\t{res.wall_time:.3f}")
        if out_dir is not None and res.route is not None:
            (out_dir / "routes").mkdir(exist_ok=True)
            (out_dir / "routes" / f"{n:05d}.json").write_text(json.dumps(res.route.to_dict(), indent=2) + "\n")
    if out_dir is not None:
        with (out_dir / "summary.csv").open("w", encoding="utf-8") as fh:
            fh.write("target,solved,iterations,model_calls,wall_time,nodes\n")
            for target, res in rows:
                fh.write(f"{target},{int(res.solved)},{res.iterations},{res.model_calls},{res.wall_time:.4f},{res.nodes_created}\n")
        write_manifest(out_dir, "plan", args, {"stock_size": len(stock)})
    return 0


def cmd_bench_single(args: argparse.Namespace) -> int:
    model, vocab = _load_model(args)
    pairs, _ = corpus.load_reactions(_existing("--data", args.data))
    if args.limit is not None:
        pairs = pairs[: args.limit]
    overrides = {"nucleus": args.nucleus, "max_len": args.max_len}
    report = bench_single_step(
        model,
        vocab,
        pairs,
        [Strategy(s) for s in _csv_list(args.strategies)],
        [int(b) for b in _csv_list(args.batch_sizes)],
        runs=args.runs,
        beam_size=args.beams,
        **overrides,
    )
    write_report(report, args.out_dir, "single_step")
    write_manifest(args.out_dir, "bench-single", args)
    print(render_single(report))
    return 0


def parse_plan_configs(spec: str, base: argparse.Namespace) -> list[NamedPlanConfig]:
    """``algo:width:seconds`` items, comma separated (``retro-star:16:5``)."""
    out = []
    for item in _csv_list(spec):
        parts = item.split(":")
        if len(parts) != 3:
            raise CliError(f"--configs: expected algo:width:seconds, got {item!r}")
        algo, width, seconds = parts
        try:
            config = PlanConfig(
                max_depth=base.max_depth,
                max_iterations=base.max_iterations,
                time_limit=float(seconds),
                expansions=base.beams,
                beam_width=int(width),
                algorithm=algo,
            )
        except ValueError as err:
            raise CliError(f"--configs: {item!r}: {err}") from err
        out.append(NamedPlanConfig(f"{algo} W={width} {seconds}s", config))
    return out


def cmd_bench_multi(args: argparse.Namespace) -> int:
    model, vocab = _load_model(args)
    stock = corpus.load_stock(_existing("--stock", args.stock))
    targets = corpus.load_lines(_existing("--targets", args.targets))
    if args.limit is not None:
        targets = targets[: args.limit]
    configs = parse_plan_configs(args.configs, args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    decode_cfg = _decode_config(args, model, 1)
    report = bench_multi_step(
        lambda: Retrosynthesizer(model, vocab, decode_cfg),
        targets,
        stock,
        configs,
        results_path=args.out_dir / "results.jsonl",
        workers=args.workers,
    )
    write_report(report, args.out_dir, "multi_step")
    write_manifest(args.out_dir, "bench-multi", args)
    print(render_multi(report))
    return 0


# --- parser ------------------------------------------------------------------


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", type=Path, help="model checkpoint file")
    p.add_argument("--vocab", type=Path, help="vocabulary file (default: vocab.txt beside the checkpoint)")


def _add_decode_flags(p: argparse.ArgumentParser, default_strategy: str = "msbs") -> None:
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=default_strategy)
    p.add_argument("--beams", type=int, default=10, help="beam size K")
    p.add_argument("--nucleus", type=float, default=0.9975)
    p.add_argument("--max-len", type=int, default=160)
    p.add_argument("--draft-len", type=int)
    p.add_argument("--n-drafts", type=int)


def _add_plan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stock", type=Path)
    p.add_argument("--max-depth", type=int, default=5)
    p.add_argument("--max-iterations", type=int, default=35000)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="specretro", description="Speculative beam search for retrosynthesis.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-pairs", type=int, default=20000)
    p.add_argument("--n-targets", type=int, default=200)
    p.add_argument("--max-depth", type=int, default=5)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", type=Path)
    p.add_argument("--vocab", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--medusa-heads", type=int, default=8)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="predict precursors")
    _add_model_flags(p)
    _add_decode_flags(p)
    p.add_argument("smiles", nargs="*")
    p.add_argument("--input", type=Path)
    p.add_argument("--output", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--batch-size", type=int, default=1)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("plan", help="multi-step route search")
    _add_model_flags(p)
    _add_decode_flags(p)
    _add_plan_flags(p)
    p.add_argument("--algo", choices=["retro-star", "dfs"], default="retro-star")
    p.add_argument("--beam-width", type=int, default=1)
    p.add_argument("--time-limit", type=float, default=5.0)
    p.add_argument("--target", action="append", default=[])
    p.add_argument("--targets", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bench-single", help="single-step benchmark")
    _add_model_flags(p)
    p.add_argument("--data", type=Path, help="reaction TSV")
    p.add_argument("--strategies", default="bs,bs-opt,hsbs,msbs")
    p.add_argument("--batch-sizes", default="1")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--beams", type=int, default=10)
    p.add_argument("--nucleus", type=float, default=0.9975)
    p.add_argument("--max-len", type=int, default=160)
    p.add_argument("--limit", type=int)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_bench_single)

    p = sub.add_parser("bench-multi", help="multi-step benchmark")
    _add_model_flags(p)
    _add_decode_flags(p)
    _add_plan_flags(p)
    p.add_argument("--targets", type=Path)
    p.add_argument("--configs", default="retro-star:1:5,retro-star:16:5")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--limit", type=int)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_bench_multi)

    for action in sub.choices.values():
        action.add_argument("--config", type=Path, help="key = value defaults file")
    return parser, dict(sub.choices)


def _peek_config(argv: Sequence[str]) -> Path | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if token.startswith("--config="):
            return Path(token.split("=", 1)[1])
    return None


def apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Install file values as defaults of ``sub`` so explicit flags still win."""
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise CliError(f"--config: unknown key {key!r}")
        try:
            converted = action.type(value) if action.type is not None else value
        except (TypeError, ValueError) as err:
            raise CliError(f"--config: bad value for {key}: {value!r}") from err
        if action.choices is not None and converted not in action.choices:
            raise CliError(f"--config: {key} must be one of {sorted(action.choices)}")
        if isinstance(action.default, list):
            converted = [converted]
        defaults[key] = converted
        action.required = False
    sub.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser, subs = build_parser()
    config = _peek_config(argv)
    if config is not None:
        command = next((a for a in argv if a in subs), None)
        if command is None:
            raise CliError("--config needs a subcommand")
        apply_config(subs[command], read_config_file(config))
    return parser.parse_args(list(argv))


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
        return args.func(args)
    except CliError as err:
        print(f"specretro: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - any failure becomes a one-line diagnostic
        print(f"specretro: error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
