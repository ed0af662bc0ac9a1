"""Synthetic retro-grammar corpus plus loaders for external reaction and stock files.

The grammar builds SMILES-like molecules as linear chains of building
blocks joined by named coupling rules. Each rule rewrites a pair of
reactive end groups into a linker, so a product keeps nearly all reactant
tokens verbatim. Fragments never contain N, O, ``=`` or ``#``, which makes
every linker unambiguous and the retro disconnection a function of the
product string: the leftmost linker is always cut first.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from specretro.plan.stock import Stock
from specretro.smiles_tok import TokenizationError, tokenize

logger = logging.getLogger(__name__)


class GrammarError(ValueError):
    pass


class DataLoadError(Exception):
    pass


@dataclass(frozen=True)
class ReactionPair:
    product: str
    reactants: str

    @property
    def precursors(self) -> list[str]:
        return self.reactants.split(".")


@dataclass(frozen=True)
class Rule:
    name: str
    left_group: tuple[str, ...]
    right_group: tuple[str, ...]
    linker: tuple[str, ...]

    def join(self, left: Sequence[str], right: Sequence[str]) -> list[str]:
        return list(left[: len(left) - len(self.left_group)]) + list(self.linker) + list(right[len(self.right_group) :])


RULES = (
    Rule("amide", ("C", "(", "=", "O", ")", "O"), ("N",), ("C", "(", "=", "O", ")", "N")),
    Rule("ester", ("C", "(", "=", "O", ")", "Cl"), ("O",), ("C", "(", "=", "O", ")", "O")),
    Rule("reductive_amination", ("C", "=", "O"), ("N",), ("C", "N")),
    Rule("sonogashira", ("C", "#", "C"), ("Br",), ("C", "#", "C")),
)


@dataclass(frozen=True)
class GrammarConfig:
    alphabet: tuple[str, ...] = ("C", "C", "C", "c", "F", "Cl", "I")
    n_rules: int = 4
    fragment_len: tuple[int, int] = (2, 5)
    branch_prob: float = 0.3
    max_depth: int = 5
    n_building_blocks: int = 1500
    n_pairs: int = 20000
    valid_frac: float = 0.05
    test_frac: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.n_rules <= len(RULES):
            raise GrammarError(f"n_rules must be in 1..{len(RULES)}")
        if not 1 <= self.max_depth <= 5:
            raise GrammarError("max_depth must be in 1..5")
        lo, hi = self.fragment_len
        if lo < 1 or hi < lo:
            raise GrammarError("bad fragment_len range")
        forbidden = {"N", "O", "=", "#", "Br", "(", ")", "."}
        if not self.alphabet or forbidden & set(self.alphabet):
            raise GrammarError("alphabet must be non-empty and avoid linker tokens")

    @property
    def rules(self) -> tuple[Rule, ...]:
        return RULES[: self.n_rules]


@dataclass(frozen=True)
class BuildingBlock:
    """Fragment decorated with an optional right-facing and left-facing group."""

    tokens: tuple[str, ...]
    head: Rule | None  # carries head.right_group at the start
    tail: Rule | None  # carries tail.left_group at the end

    @property
    def smiles(self) -> str:
        return "".join(self.tokens)


@dataclass
class SyntheticDataset:
    config: GrammarConfig
    train: list[ReactionPair]
    valid: list[ReactionPair]
    test: list[ReactionPair]
    stock: list[str]
    depths: dict[str, int] = field(default_factory=dict)

    def manifest(self) -> dict:
        def digest(pairs: Iterable[ReactionPair]) -> str:
            h = hashlib.sha256()
            for p in pairs:
                h.update(f"{p.product}\t{p.reactants}\n".encode())
            return h.hexdigest()

        cfg = asdict(self.config)
        return {
            "config": cfg,
            "seed": self.config.seed,
            "sizes": {"train": len(self.train), "valid": len(self.valid), "test": len(self.test), "stock": len(self.stock)},
            "checksums": {
                "train": digest(self.train),
                "valid": digest(self.valid),
                "test": digest(self.test),
                "stock": hashlib.sha256("\n".join(self.stock).encode()).hexdigest(),
            },
        }

    def write(self, directory: str | Path) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("train", "valid", "test"):
            write_reactions(out / f"{name}.tsv", getattr(self, name))
        (out / "stock.txt").write_text("\n".join(self.stock) + "\n")
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2))


class Grammar:
    """Sampler over building blocks and linear product chains."""

    def __init__(self, config: GrammarConfig) -> None:
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.blocks = self._make_blocks()
        self._by_head: dict[str | None, list[BuildingBlock]] = {}
        for bb in self.blocks:
            self._by_head.setdefault(bb.head.name if bb.head else None, []).append(bb)

    def _fragment(self) -> tuple[str, ...]:
        lo, hi = self.config.fragment_len
        n = int(self.rng.integers(lo, hi + 1))
        atoms = [str(a) for a in self.rng.choice(self.config.alphabet, size=n)]
        if n >= 3 and self.rng.random() < self.config.branch_prob:
            pos = int(self.rng.integers(1, n - 1))
            atoms[pos] = f"({atoms[pos]})"
        return tuple(tokenize("".join(atoms)))

    def _make_blocks(self) -> list[BuildingBlock]:
        rules = self.config.rules
        seen: dict[str, BuildingBlock] = {}
        attempts = 0
        while len(seen) < self.config.n_building_blocks:
            attempts += 1
            if attempts > 50 * self.config.n_building_blocks:
                raise GrammarError("alphabet/fragment length too small for the requested stock size")
            frag = self._fragment()
            kind = self.rng.integers(3)  # 0 left-capped, 1 right-capped, 2 bifunctional
            head = rules[int(self.rng.integers(len(rules)))] if kind in (1, 2) else None
            tail = rules[int(self.rng.integers(len(rules)))] if kind in (0, 2) else None
            tokens = (head.right_group if head else ()) + frag + (tail.left_group if tail else ())
            bb = BuildingBlock(tokens, head, tail)
            seen.setdefault(bb.smiles, bb)
        return sorted(seen.values(), key=lambda b: b.smiles)

    @property
    def stock(self) -> list[str]:
        return [bb.smiles for bb in self.blocks]

    def _pick(self, head: Rule | None, want_tail: bool | None) -> BuildingBlock | None:
        pool = self._by_head.get(head.name if head else None, [])
        if want_tail is not None:
            pool = [bb for bb in pool if (bb.tail is not None) == want_tail]
        if not pool:
            return None
        return pool[int(self.rng.integers(len(pool)))]

    def sample_chain(self, depth: int, capped: bool = False) -> list[BuildingBlock]:
        """Blocks ``b0..b_depth`` forming a product with ``depth`` linkers.

        With ``capped`` the chain starts and ends on mono-functional blocks.
        """
        for _ in range(1000):
            if capped or self.rng.random() < 0.5:
                first = self._pick(None, True)
            else:
                heads = [r for r in self.config.rules]
                first = self._pick(heads[int(self.rng.integers(len(heads)))], True)
            chain = [first]
            ok = first is not None
            for i in range(depth):
                if not ok:
                    break
                last = i == depth - 1
                want_tail = False if (last and capped) else (True if not last else None)
                nxt = self._pick(chain[-1].tail, want_tail)
                if nxt is None:
                    ok = False
                    break
                chain.append(nxt)
            if ok:
                return chain
        raise GrammarError("could not sample a chain; stock too small")

    @staticmethod
    def chain_tokens(chain: Sequence[BuildingBlock]) -> list[str]:
        tokens = list(chain[-1].tokens)
        for i in range(len(chain) - 2, -1, -1):
            tokens = chain[i].tail.join(chain[i].tokens, tokens)
        return tokens


def find_linkers(tokens: Sequence[str], rules: Sequence[Rule] = RULES) -> list[tuple[int, Rule]]:
    """All (position, rule) linker occurrences in a product token list."""
    hits = []
    n = len(tokens)
    for i in range(n):
        for rule in rules:
            m = len(rule.linker)
            if tuple(tokens[i : i + m]) != rule.linker:
                continue
            if i == 0 or i + m >= n:
                continue  # a terminal group, not a linker
            # "C(=O)O" and "C#C" also end terminal groups: they need a continuation
            nxt = tokens[i + m]
            if nxt in ("(", ")", "."):
                continue
            hits.append((i, rule))
            break
    return hits


def disconnect(tokens: Sequence[str], position: int, rule: Rule) -> tuple[list[str], list[str]]:
    left = list(tokens[:position]) + list(rule.left_group)
    right = list(rule.right_group) + list(tokens[position + len(rule.linker) :])
    return left, right


def retro_leftmost(smiles: str, rules: Sequence[Rule] = RULES) -> str | None:
    """Reactants of the canonical (leftmost) disconnection, or None."""
    tokens = tokenize(smiles)
    hits = find_linkers(tokens, rules)
    if not hits:
        return None
    left, right = disconnect(tokens, *hits[0])
    return "".join(left) + "." + "".join(right)


def gen_synthetic(config: GrammarConfig) -> SyntheticDataset:
    """Deterministic train/valid/test reaction pairs and the building-block stock."""
    grammar = Grammar(config)
    rng = grammar.rng
    seen: dict[str, ReactionPair] = {}
    depths: dict[str, int] = {}
    attempts = 0
    while len(seen) < config.n_pairs:
        attempts += 1
        if attempts > 20 * config.n_pairs:
            raise GrammarError("grammar cannot produce enough distinct products")
        depth = int(rng.integers(1, config.max_depth + 1))
        chain = grammar.sample_chain(depth)
        product = "".join(grammar.chain_tokens(chain))
        if product in seen:
            continue
        reactants = chain[0].smiles + "." + "".join(grammar.chain_tokens(chain[1:]))
        seen[product] = ReactionPair(product, reactants)
        depths[product] = depth
    pairs = list(seen.values())
    order = rng.permutation(len(pairs))
    n_valid = int(round(config.valid_frac * len(pairs)))
    n_test = int(round(config.test_frac * len(pairs)))
    valid = [pairs[i] for i in order[:n_valid]]
    test = [pairs[i] for i in order[n_valid : n_valid + n_test]]
    train = [pairs[i] for i in order[n_valid + n_test :]]
    return SyntheticDataset(config, train, valid, test, grammar.stock, depths)


def gen_targets(config: GrammarConfig, n: int, seed: int = 1, exclude: Iterable[str] = ()) -> list[tuple[str, int]]:
    """Capped chain targets with known route depth, disjoint from ``exclude``."""
    grammar = Grammar(config)
    grammar.rng = np.random.default_rng(seed)
    banned = set(exclude)
    out: dict[str, int] = {}
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 1000 * n:
            raise GrammarError("cannot generate enough distinct targets")
        depth = 1 + (len(out) % config.max_depth)
        product = "".join(grammar.chain_tokens(grammar.sample_chain(depth, capped=True)))
        if product in banned or product in out:
            continue
        out[product] = depth
    return list(out.items())


def copied_fraction(product: str, reactants: str) -> float:
    """Longest-common-subsequence share of product tokens found in the reactants."""
    a, b = tokenize(product), tokenize(reactants)
    if not a:
        return 1.0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1] / len(a)


class GrammarOracle:
    """Neural-free single-step model that applies the grammar rules in reverse.

    Every linker is offered as a disconnection, leftmost first, with a
    decreasing log-probability so that rank order is preserved.
    """

    def __init__(self, rules: Sequence[Rule] = RULES, leftmost_only: bool = False) -> None:
        self.rules = tuple(rules)
        self.leftmost_only = leftmost_only
        self.model_calls = 0

    def predict(self, molecules: Sequence[str]) -> list[list[tuple[str, float]]]:
        self.model_calls += 1
        out = []
        for smiles in molecules:
            try:
                tokens = tokenize(smiles)
            except TokenizationError:
                out.append([])
                continue
            hits = find_linkers(tokens, self.rules)
            if self.leftmost_only:
                hits = hits[:1]
            preds = []
            for rank, (pos, rule) in enumerate(hits):
                left, right = disconnect(tokens, pos, rule)
                preds.append(("".join(left) + "." + "".join(right), -0.1 * (rank + 1)))
            out.append(preds)
        return out


def write_reactions(path: str | Path, pairs: Iterable[ReactionPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.product}\t{p.reactants}\n")


@dataclass
class LoadReport:
    loaded: int
    skipped: int


def load_reactions(path: str | Path, format: str = "tsv") -> tuple[list[ReactionPair], LoadReport]:
    """Read ``product<TAB>reactants`` lines; untokenizable lines are skipped and counted."""
    if format != "tsv":
        raise DataLoadError(f"unsupported reaction format {format!r}")
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise DataLoadError(f"cannot read {path}: {err}") from err
    pairs = []
    skipped = 0
    for line in lines:
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 2:
            skipped += 1
            continue
        product, reactants = parts[0].strip(), parts[1].strip()
        try:
            tokenize(product)
            tokenize(reactants)
        except TokenizationError:
            skipped += 1
            continue
        if not product or not reactants:
            skipped += 1
            continue
        pairs.append(ReactionPair(product, reactants))
    report = LoadReport(len(pairs), skipped)
    logger.info("loaded %d reactions from %s (%d skipped)", report.loaded, path, report.skipped)
    if not pairs:
        raise DataLoadError(f"{path}: no usable reactions")
    return pairs, report


def load_lines(path: str | Path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise DataLoadError(f"cannot read {path}: {err}") from err
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_stock(path: str | Path) -> Stock:
    """Line-delimited SMILES file as a deduplicated :class:`Stock`."""
    stock = Stock.from_iterable(load_lines(path))
    logger.info("stock %s: %d entries, %d unique", path, stock.raw_count, len(stock))
    return stock
