"""Atomwise SMILES tokenization, vocabularies and a syntactic validity check."""

from __future__ import annotations

import enum
import hashlib
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

# Atomwise pattern from the Molecular Transformer family of models.
ATOMWISE_PATTERN = (
    r"(\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>|\*|\$|\%[0-9]{2}|[0-9])"
)
_TOKEN_RE = re.compile(ATOMWISE_PATTERN)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class TokenizationError(ValueError):
    def __init__(self, smiles: str, position: int) -> None:
        super().__init__(
            f"cannot tokenize {smiles!r}: unexpected character {smiles[position]!r} at position {position}"
        )
        self.smiles = smiles
        self.position = position


def tokenize(smiles: str) -> list[str]:
    """Split a SMILES string into atomwise tokens.

    Bracket atoms (``[nH]``, ``[C@@H]``), two-letter halogens and ``%NN``
    ring closures come back as single tokens.
    """
    tokens = []
    pos = 0
    for match in _TOKEN_RE.finditer(smiles):
        if match.start() != pos:
            raise TokenizationError(smiles, pos)
        tokens.append(match.group(0))
        pos = match.end()
    if pos != len(smiles):
        raise TokenizationError(smiles, pos)
    return tokens


def detokenize(tokens: Iterable[str]) -> str:
    return "".join(tokens)


@dataclass(frozen=True)
class Vocabulary:
    """Bijective token <-> id map with the four specials at ids 0..3."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.id_to_token[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def specials(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(SPECIALS)}

    @property
    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()

    def encode(self, smiles: str) -> list[int]:
        """Token ids for ``smiles``; tokens outside the vocabulary map to ``<unk>``."""
        return [self.token_to_id.get(tok, UNK_ID) for tok in tokenize(smiles)]

    def decode(self, ids: Iterable[int]) -> str:
        """Inverse of :meth:`encode`; stops at ``<eos>`` and drops other specials."""
        out = []
        for i in ids:
            if i == EOS_ID:
                break
            if i < len(SPECIALS):
                continue
            out.append(self.id_to_token[i])
        return "".join(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line for line in lines if line != ""))


def build_vocab(corpus: Iterable[str]) -> Vocabulary:
    tokens: set[str] = set()
    for smiles in corpus:
        tokens.update(tokenize(smiles))
    tokens.difference_update(SPECIALS)
    return Vocabulary(SPECIALS + tuple(sorted(tokens)))


class InvalidReason(enum.Enum):
    EMPTY = "empty string"
    UNKNOWN_CHARACTER = "unknown character"
    MALFORMED_BRACKET = "malformed bracket atom"
    UNBALANCED_PARENTHESES = "unbalanced parentheses"
    UNPAIRED_RING_CLOSURE = "unpaired ring-closure digit"


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    reason: InvalidReason | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.valid


_ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr "
    "Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb "
    "Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr "
    "Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og"
).split()
_AROMATIC = ("b", "c", "n", "o", "s", "p", "se", "as", "te")
_SYMBOLS = "|".join(sorted([*_ELEMENTS, *_AROMATIC], key=len, reverse=True))

_BRACKET_ATOM_RE = re.compile(
    r"\[(\d+)?"  # isotope
    rf"({_SYMBOLS}|\*)"  # element
    r"(@(?:@|TH[12]|AL[12]|SP[1-3]|TB\d{1,2}|OH\d{1,2})?)?"  # chirality
    r"(H\d?)?"  # hydrogens
    r"([+-]\d*|\+\++|--+)?"  # charge
    r"(:\d+)?\]"  # atom map
)


def _bracket_problem(smiles: str) -> str | None:
    i = 0
    while i < len(smiles):
        ch = smiles[i]
        if ch == "]":
            return f"stray ']' at position {i}"
        if ch == "[":
            end = smiles.find("]", i + 1)
            if end < 0:
                return f"unclosed '[' at position {i}"
            atom = smiles[i : end + 1]
            if "[" in atom[1:] or not _BRACKET_ATOM_RE.fullmatch(atom):
                return f"bad bracket atom {atom!r}"
            i = end + 1
            continue
        i += 1
    return None


def validate_syntactic(smiles: str) -> ValidityReport:
    """Syntactic SMILES check: brackets, tokens, parentheses and ring closures.

    No valence or aromaticity perception is attempted.
    """
    if not smiles:
        return ValidityReport(False, InvalidReason.EMPTY)
    problem = _bracket_problem(smiles)
    if problem:
        return ValidityReport(False, InvalidReason.MALFORMED_BRACKET, problem)
    try:
        tokens = tokenize(smiles)
    except TokenizationError as err:
        return ValidityReport(False, InvalidReason.UNKNOWN_CHARACTER, f"position {err.position}")

    depth = 0
    open_rings: set[str] = set()
    for tok in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
            if depth < 0:
                return ValidityReport(False, InvalidReason.UNBALANCED_PARENTHESES, "unexpected ')'")
        elif tok == ".":
            if depth:
                return ValidityReport(False, InvalidReason.UNBALANCED_PARENTHESES, "'.' inside branch")
        elif tok.isdigit() or tok.startswith("%"):
            label = tok.lstrip("%")
            if label in open_rings:
                open_rings.remove(label)
            else:
                open_rings.add(label)
    if depth:
        return ValidityReport(False, InvalidReason.UNBALANCED_PARENTHESES, f"{depth} unclosed '('")
    if open_rings:
        labels = ",".join(sorted(open_rings, key=int))
        return ValidityReport(False, InvalidReason.UNPAIRED_RING_CLOSURE, labels)
    return ValidityReport(True)


def encode_batch(vocab: Vocabulary, smiles: Sequence[str]) -> list[list[int]]:
    return [vocab.encode(s) for s in smiles]
