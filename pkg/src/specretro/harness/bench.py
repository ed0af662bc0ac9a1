"""Single-step and multi-step benchmark runners."""

from __future__ import annotations

import json
import logging
import statistics
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from specretro.corpus import ReactionPair
from specretro.decode import DecodeConfig, DecodeMetrics, Strategy, generate, hsbs_settings
from specretro.plan import PlanConfig, Stock, plan
from specretro.plan.search import SingleStepModel
from specretro.smiles_tok import Vocabulary, validate_syntactic

logger = logging.getLogger(__name__)

TOP_N = (1, 3, 5, 10)


def decode_config_for(strategy: Strategy | str, batch_size: int, beam_size: int, model, **overrides) -> DecodeConfig:
    """Decode settings for one benchmark cell.

    Heuristic drafting follows :data:`~specretro.decode.drafts.HSBS_DRAFTS`;
    Medusa drafting uses one draft as long as the model's extra heads allow.
    """
    strategy = Strategy(strategy)
    kwargs: dict = {"beam_size": beam_size, "strategy": strategy}
    if strategy == Strategy.HSBS:
        kwargs["n_drafts"], kwargs["draft_len"] = hsbs_settings(batch_size)
    elif strategy == Strategy.MSBS:
        kwargs["draft_len"] = max(1, model.config.medusa_heads)
    kwargs.update(overrides)
    return DecodeConfig(**kwargs)


@dataclass
class SingleStepRow:
    strategy: str
    batch_size: int
    runs: int
    wall_time_mean: float
    wall_time_std: float | None
    model_calls: int
    mean_batch_size: float
    acceptance_rate: float
    drafted_tokens: int
    accepted_tokens: int
    top_n_accuracy: dict[int, float]
    invalid_rate: list[float]
    calls_reproducible: bool


@dataclass
class SingleStepReport:
    rows: list[SingleStepRow] = field(default_factory=list)
    n_reactions: int = 0

    def to_dict(self) -> dict:
        return {"n_reactions": self.n_reactions, "rows": [asdict(r) for r in self.rows]}


def _decode_all(model, sources: list[list[int]], config: DecodeConfig, batch_size: int):
    predictions = []
    metrics = DecodeMetrics()
    started = time.perf_counter()
    for i in range(0, len(sources), batch_size):
        hyps, m = generate(model, sources[i : i + batch_size], config)
        predictions.extend(hyps)
        metrics = metrics.merge(m)
    return predictions, metrics, time.perf_counter() - started


def bench_single_step(
    model,
    vocab: Vocabulary,
    dataset: Sequence[ReactionPair],
    strategies: Sequence[Strategy | str],
    batch_sizes: Sequence[int],
    runs: int = 1,
    beam_size: int = 10,
    **decode_overrides,
) -> SingleStepReport:
    """Measure every (strategy, batch size) cell on identical inputs.

    Tokenization happens before the clock starts.
    """
    report = SingleStepReport(n_reactions=len(dataset))
    if not dataset:
        return report
    sources = [vocab.encode(p.product) for p in dataset]
    for strategy in strategies:
        for batch_size in batch_sizes:
            config = decode_config_for(strategy, batch_size, beam_size, model, **decode_overrides)
            times = []
            calls = set()
            preds = metrics = None
            for _ in range(max(1, runs)):
                preds_r, metrics_r, wall = _decode_all(model, sources, config, batch_size)
                times.append(wall)
                calls.add(metrics_r.model_calls)
                if preds is None:
                    preds, metrics = preds_r, metrics_r
            strings = [[vocab.decode(h.tokens) for h in hyps] for hyps in preds]
            accuracy = {
                n: sum(p.reactants in s[:n] for p, s in zip(dataset, strings)) / len(dataset) for n in TOP_N
            }
            invalid = []
            for rank in range(beam_size):
                ranked = [s[rank] for s in strings if len(s) > rank]
                invalid.append(sum(not validate_syntactic(x).valid for x in ranked) / len(ranked) if ranked else 0.0)
            report.rows.append(
                SingleStepRow(
                    strategy=Strategy(strategy).value,
                    batch_size=batch_size,
                    runs=len(times),
                    wall_time_mean=statistics.fmean(times),
                    wall_time_std=statistics.stdev(times) if len(times) >= 2 else None,
                    model_calls=metrics.model_calls,
                    mean_batch_size=metrics.mean_batch_size,
                    acceptance_rate=metrics.acceptance_rate,
                    drafted_tokens=metrics.drafted_tokens,
                    accepted_tokens=metrics.accepted_tokens,
                    top_n_accuracy=accuracy,
                    invalid_rate=invalid,
                    calls_reproducible=len(calls) == 1,
                )
            )
            logger.info("bench %s B=%d: %.2fs, %d calls", strategy, batch_size, times[0], metrics.model_calls)
    return report


@dataclass(frozen=True)
class NamedPlanConfig:
    name: str
    config: PlanConfig


@dataclass
class MultiStepRow:
    name: str
    targets: int
    solved: int
    solved_pct: float
    total_time: float
    time_per_solved: float | None
    common_solved: int
    common_time: float | None
    common_iterations: float | None


@dataclass
class MultiStepReport:
    rows: list[MultiStepRow] = field(default_factory=list)
    results: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}


def common_solved(a: set[str], b: set[str]) -> set[str]:
    return a & b


def _load_done(path: Path | None) -> list[dict]:
    if path is None or not path.exists():
        return []
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning("ignoring truncated result line in %s", path)
    return rows


def bench_multi_step(
    model_factory: Callable[[], SingleStepModel],
    targets: Sequence[str],
    stock: Stock,
    configs: Sequence[NamedPlanConfig],
    results_path: str | Path | None = None,
    workers: int = 1,
) -> MultiStepReport:
    """Run every target under every configuration and aggregate.

    One JSON line per (configuration, target) is appended to
    ``results_path`` as soon as it finishes; lines already present are
    reused, so an interrupted run can be resumed. Each worker thread gets
    its own single-step model from ``model_factory``.
    """
    path = Path(results_path) if results_path is not None else None
    done = {(r["config"], r["target"]): r for r in _load_done(path)}
    todo = [(c, t) for c in configs for t in targets if (c.name, t) not in done]

    def run(job: tuple[NamedPlanConfig, str], model: SingleStepModel) -> dict:
        named, target = job
        res = plan(target, model, stock, named.config)
        return {
            "config": named.name,
            "target": target,
            "solved": res.solved,
            "iterations": res.iterations,
            "model_calls": res.model_calls,
            "wall_time": res.wall_time,
            "nodes": res.nodes_created,
            "route": res.route.to_dict() if res.route is not None else None,
        }

    def record(row: dict) -> None:
        done[(row["config"], row["target"])] = row
        if path is not None:
            with path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    if not todo:
        pass
    elif workers <= 1:
        model = model_factory()
        for job in todo:
            record(run(job, model))
    else:
        chunks = [c for c in (todo[i::workers] for i in range(workers)) if c]

        def worker(chunk: list) -> list[dict]:
            model = model_factory()
            return [run(job, model) for job in chunk]

        with ThreadPoolExecutor(workers) as pool:
            for rows in pool.map(worker, chunks):
                for row in rows:
                    record(row)

    report = MultiStepReport()
    by_config = {c.name: [done[(c.name, t)] for t in targets] for c in configs}
    report.results = [r for rows in by_config.values() for r in rows]
    if not configs:
        return report
    baseline = {r["target"] for r in by_config[configs[0].name] if r["solved"]}
    for named in configs:
        rows = by_config[named.name]
        solved = [r for r in rows if r["solved"]]
        solved_set = {r["target"] for r in solved}
        common = [r for r in solved if r["target"] in common_solved(baseline, solved_set)]
        total = sum(r["wall_time"] for r in rows)
        report.rows.append(
            MultiStepRow(
                name=named.name,
                targets=len(rows),
                solved=len(solved),
                solved_pct=100.0 * len(solved) / len(rows) if rows else 0.0,
                total_time=total,
                time_per_solved=sum(r["wall_time"] for r in solved) / len(solved) if solved else None,
                common_solved=len(common),
                common_time=statistics.fmean(r["wall_time"] for r in common) if common else None,
                common_iterations=statistics.fmean(r["iterations"] for r in common) if common else None,
            )
        )
    return report
