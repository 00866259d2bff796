"""Molecule identity, ingredient inventories, structural features, and
single-step expansion oracles.

Molecules are interned as canonical text keys. An expansion oracle maps a
molecule to an ordered list of candidate retro reactions (product, reactant
set, positive cost). Three oracle families are provided: additive integer
splits, factor splits of integers, and table-driven reaction sets loaded
from JSONL so hand-built fixtures or recorded data can be plugged in.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

MoleculeId = str

_FEATURE_PRIMES = (2, 3, 5, 7, 11, 13)


class DomainSyntaxError(ValueError):
    """Raised when a raw molecule string does not parse in a domain."""


def _hash64(*parts: object) -> int:
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _unit_interval(*parts: object) -> float:
    # deterministic stand-in for a random stream, keyed by the parts
    return (_hash64(*parts) + 0.5) / 2.0**64


@dataclass(frozen=True)
class Reaction:
    """One retro step: *product* is made from *reactants* at a positive cost."""

    product: MoleculeId
    reactants: frozenset[MoleculeId]
    cost: float

    def __post_init__(self) -> None:
        if not self.reactants:
            raise ValueError(f"reaction for {self.product!r} has no reactants")
        if not (math.isfinite(self.cost) and self.cost > 0.0):
            raise ValueError(f"reaction cost must be finite and > 0, got {self.cost!r}")

    @property
    def reactant_key(self) -> tuple[MoleculeId, ...]:
        """Sorted reactant tuple, used for deterministic tie-breaking."""
        return tuple(sorted(self.reactants))


class Inventory:
    """Immutable set of available starting molecules."""

    def __init__(self, members: Iterable[MoleculeId]):
        self._members = frozenset(members)

    def __contains__(self, molecule: MoleculeId) -> bool:
        return molecule in self._members

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self) -> Iterator[MoleculeId]:
        return iter(sorted(self._members))

    def __repr__(self) -> str:
        return f"Inventory({sorted(self._members)!r})"

    @classmethod
    def integer_range(cls, upper: int) -> "Inventory":
        """Inventory {1..upper} for the integer domains."""
        if upper < 1:
            raise ValueError(f"inventory upper bound must be >= 1, got {upper}")
        return cls(str(i) for i in range(1, upper + 1))

    @classmethod
    def from_file(cls, path: str | Path) -> "Inventory":
        """Load an inventory file: one canonical molecule key per line."""
        members = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            key = line.strip()
            if key:
                members.append(key)
        return cls(members)


def is_available(molecule: MoleculeId, inventory: Inventory) -> bool:
    """True iff *molecule* can be bought directly."""
    return molecule in inventory


def features(molecule: MoleculeId, bits: int = 2048) -> np.ndarray:
    """Hashed binary feature vector of a molecule key.

    Structural sub-features (characters, character bigrams, and for integer
    keys the residues modulo small primes) are hashed into *bits* positions.
    """
    if bits < 8:
        raise ValueError(f"feature width must be >= 8 bits, got {bits}")
    tokens = [f"c:{ch}" for ch in molecule]
    tokens += [f"b:{molecule[i:i + 2]}" for i in range(len(molecule) - 1)]
    if molecule.isdigit():
        value = int(molecule)
        tokens += [f"m:{p}:{value % p}" for p in _FEATURE_PRIMES]
    vec = np.zeros(bits, dtype=np.float64)
    for tok in tokens:
        vec[_hash64("feat", tok) % bits] = 1.0
    return vec


class ExpansionOracle:
    """Deterministic single-step model returning top-k reactions per molecule.

    Subclasses implement :meth:`canonical` and :meth:`reactions`; the latter
    must return the full candidate list sorted ascending by cost with ties
    broken by the lexicographic reactant key.
    """

    name: str = "abstract"

    def __init__(self, max_candidates: int = 50):
        if max_candidates < 1:
            raise ValueError(f"max_candidates must be >= 1, got {max_candidates}")
        self.max_candidates = max_candidates

    def canonical(self, raw: str) -> MoleculeId:
        raise NotImplementedError

    def reactions(self, molecule: MoleculeId) -> list[Reaction]:
        raise NotImplementedError

    def expand(self, molecule: MoleculeId, k: int | None = None) -> list[Reaction]:
        """At most *k* lowest-cost reactions producing *molecule*.

        Deterministic: same molecule and k always give the same list. An
        empty list marks a dead end.
        """
        if k is None:
            k = self.max_candidates
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        return self.reactions(molecule)[:k]


class _IntegerDomain(ExpansionOracle):
    """Shared canonicalization for the integer-valued molecule domains."""

    def __init__(self, seed: int = 0, max_candidates: int = 50):
        super().__init__(max_candidates)
        self.seed = seed

    def canonical(self, raw: str) -> MoleculeId:
        text = raw.strip()
        if not text.isdigit():
            raise DomainSyntaxError(
                f"domain {self.name!r} expects a positive integer, got {raw!r}"
            )
        value = int(text)
        if value < 1:
            raise DomainSyntaxError(
                f"domain {self.name!r} expects a positive integer, got {raw!r}"
            )
        return str(value)

    def _splits(self, n: int) -> list[tuple[object, frozenset[MoleculeId]]]:
        raise NotImplementedError

    def reactions(self, molecule: MoleculeId) -> list[Reaction]:
        n = int(self.canonical(molecule))
        splits = self._splits(n)
        if not splits:
            return []
        weights = [_unit_interval(self.seed, self.name, n, key) for key, _ in splits]
        # reserve mass keyed (n, 0) keeps every normalized weight < 1 so that
        # costs stay strictly positive even when n has a single split
        total = _unit_interval(self.seed, self.name, n, 0) + sum(weights)
        out = [
            Reaction(str(n), reactants, -math.log(w / total))
            for (_, reactants), w in zip(splits, weights)
        ]
        out.sort(key=lambda r: (r.cost, r.reactant_key))
        return out


class AdditiveSplitDomain(_IntegerDomain):
    """n can be made from {a, n-a} for every a in 1..floor(n/2)."""

    name = "additive-split"

    def _splits(self, n: int) -> list[tuple[object, frozenset[MoleculeId]]]:
        return [
            (a, frozenset({str(a), str(n - a)}))
            for a in range(1, n // 2 + 1)
        ]


class FactorSplitDomain(_IntegerDomain):
    """n can be made from {a, n/a} for every divisor pair; primes dead-end."""

    name = "factor-split"

    def _splits(self, n: int) -> list[tuple[object, frozenset[MoleculeId]]]:
        return [
            (a, frozenset({str(a), str(n // a)}))
            for a in range(2, math.isqrt(n) + 1)
            if n % a == 0
        ]


class TableDomain(ExpansionOracle):
    """Reactions looked up in a fixed table; molecules absent from the table
    are dead ends. This is the format for hand-built fixtures and recorded
    reaction sets."""

    name = "table"

    def __init__(self, reactions: Iterable[Reaction], max_candidates: int = 50):
        super().__init__(max_candidates)
        table: dict[MoleculeId, list[Reaction]] = {}
        for rxn in reactions:
            product = self.canonical(rxn.product)
            clean = Reaction(product, frozenset(r.strip() for r in rxn.reactants), rxn.cost)
            table.setdefault(product, []).append(clean)
        for rxns in table.values():
            rxns.sort(key=lambda r: (r.cost, r.reactant_key))
        self._table = table

    def canonical(self, raw: str) -> MoleculeId:
        text = raw.strip()
        if not text:
            raise DomainSyntaxError(f"domain {self.name!r} got an empty molecule key")
        return text

    def reactions(self, molecule: MoleculeId) -> list[Reaction]:
        return list(self._table.get(self.canonical(molecule), []))

    @classmethod
    def from_jsonl(cls, path: str | Path, max_candidates: int = 50) -> "TableDomain":
        """Load a reaction table: one {"product", "reactants", "cost"} JSON
        object per line."""
        rxns = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rxn = Reaction(
                    str(rec["product"]),
                    frozenset(str(r) for r in rec["reactants"]),
                    float(rec["cost"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad reaction record: {exc}") from exc
            rxns.append(rxn)
        return cls(rxns, max_candidates)

    def to_jsonl(self, path: str | Path) -> None:
        lines = []
        for product in sorted(self._table):
            for rxn in self._table[product]:
                lines.append(json.dumps(
                    {"product": rxn.product, "reactants": sorted(rxn.reactants), "cost": rxn.cost},
                    sort_keys=True,
                ))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def make_domain(spec: str, seed: int = 0, max_candidates: int = 50) -> ExpansionOracle:
    """Build a domain from a CLI-style spec: a known name or a JSONL path."""
    if spec == AdditiveSplitDomain.name:
        return AdditiveSplitDomain(seed, max_candidates)
    if spec == FactorSplitDomain.name:
        return FactorSplitDomain(seed, max_candidates)
    path = Path(spec)
    if path.suffix == ".jsonl" or path.exists():
        return TableDomain.from_jsonl(path, max_candidates)
    raise ValueError(f"unknown domain {spec!r} (expected a domain name or a JSONL path)")
