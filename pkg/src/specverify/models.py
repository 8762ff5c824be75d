"""Table-based autoregressive categorical models.

A :class:`TableArModel` assigns an exact next-token distribution to every
prefix shorter than its depth, so joint probabilities of whole sequences can
be enumerated rather than estimated.  One model plays the target (``p``) and
another the draft (``q``); :func:`generate_model_pair` builds a seeded pair
whose disagreement is controlled by a single scalar knob.

Conditionals are produced lazily from the seed and memoised, which keeps the
model semantically total over all prefixes while staying usable at depths
where an explicit table would not fit in memory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterator

import numpy as np

# A categorical distribution over token ids [0, V); entries sum to 1.
Dist = tuple[float, ...]
# A token sequence, used both as prefix key and as draft.
Sequence = tuple[int, ...]

_SEED_MASK = (1 << 64) - 1
_STREAM_LOGITS = 0
_STREAM_NOISE = 1

# Serialisation materialises every prefix; refuse anything that would not
# reasonably fit in a JSON document.
MAX_SERIALIZABLE_PREFIXES = 200_000


def substream(master_seed: int, *keys: int) -> np.random.Generator:
    """Derive an independent random stream from a master seed and index keys.

    Streams for distinct key tuples are statistically independent, and the
    derivation is deterministic, so trials can run concurrently or in any
    order without sharing generator state.
    """
    return np.random.default_rng(np.random.SeedSequence((master_seed & _SEED_MASK, *keys)))


def index_from_uniform(dist: Dist, u: float) -> int:
    """Invert the CDF of ``dist`` at ``u`` in [0, 1)."""
    acc = 0.0
    last_positive = 0
    for i, w in enumerate(dist):
        if w > 0.0:
            last_positive = i
            acc += w
            if u < acc:
                return i
    # u landed in the rounding sliver past the last cumulative step.
    return last_positive


def sample_index(dist: Dist, rng: np.random.Generator) -> int:
    """Draw one token id from ``dist`` using a single uniform."""
    return index_from_uniform(dist, rng.random())


def _softmax(logits: np.ndarray) -> Dist:
    z = np.exp(logits - logits.max())
    values = z.tolist()
    total = math.fsum(values)
    return tuple(v / total for v in values)


@dataclass(frozen=True)
class ModelPairSpec:
    """Recipe for a seeded target/draft model pair.

    ``divergence_knob`` is the magnitude of the zero-mean logit perturbation
    that turns the target's conditionals into the draft's; zero makes the two
    models identical entrywise.  ``concentration`` scales the raw logits and
    therefore controls how peaked the generated conditionals are.
    """

    vocab_size: int
    max_depth: int
    seed: int
    divergence_knob: float = 0.5
    concentration: float = 1.0

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.concentration <= 0:
            raise ValueError(f"concentration must be > 0, got {self.concentration}")
        if self.divergence_knob < 0:
            raise ValueError(f"divergence_knob must be >= 0, got {self.divergence_knob}")


class TableArModel:
    """Autoregressive categorical model backed by an exact per-prefix table.

    Every prefix of length ``< max_depth`` over ``[0, vocab_size)`` has a
    next-token distribution, either stored explicitly or produced on demand
    by ``generator`` and cached.  Models are immutable after construction
    (the cache is an internal memo), so they are safe to share across
    concurrent readers.
    """

    def __init__(
        self,
        vocab_size: int,
        max_depth: int,
        table: dict[Sequence, Dist] | None = None,
        generator: Callable[[Sequence], Dist] | None = None,
    ):
        if vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
        if max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {max_depth}")
        if table is None and generator is None:
            raise ValueError("need an explicit table or a generator")
        self.vocab_size = vocab_size
        self.max_depth = max_depth
        self._table: dict[Sequence, Dist] = {}
        self._generator = generator
        if table:
            for prefix, dist in table.items():
                self._table[tuple(prefix)] = self._check_dist(tuple(prefix), tuple(dist))

    def _check_dist(self, prefix: Sequence, dist: Dist) -> Dist:
        if len(dist) != self.vocab_size:
            raise ValueError(f"distribution for prefix {prefix} has length {len(dist)}, expected {self.vocab_size}")
        if any(w < 0.0 for w in dist):
            raise ValueError(f"negative probability in distribution for prefix {prefix}")
        if abs(math.fsum(dist) - 1.0) > 1e-12:
            raise ValueError(f"distribution for prefix {prefix} sums to {math.fsum(dist)!r}, not 1")
        return dist

    def _check_prefix(self, prefix: Sequence, max_len: int) -> Sequence:
        prefix = tuple(prefix)
        if len(prefix) > max_len:
            raise ValueError(f"prefix of length {len(prefix)} exceeds model depth {self.max_depth}")
        for tok in prefix:
            if not 0 <= tok < self.vocab_size:
                raise ValueError(f"token {tok} out of range [0, {self.vocab_size})")
        return prefix

    def conditional(self, prefix: Sequence) -> Dist:
        """Exact next-token distribution after ``prefix``.  Pure."""
        dist = self._table.get(prefix) if type(prefix) is tuple else None
        if dist is None:
            # validate only off the cached path; cached prefixes were checked once
            prefix = self._check_prefix(prefix, self.max_depth - 1)
            dist = self._table.get(prefix)
            if dist is None:
                if self._generator is None:
                    raise ValueError(f"prefix {prefix} missing from explicit table")
                dist = self._check_dist(prefix, self._generator(prefix))
                self._table[prefix] = dist
        return dist

    def joint(self, seq: Sequence) -> float:
        """Probability of ``seq`` as the product of its conditionals."""
        seq = self._check_prefix(seq, self.max_depth)
        prob = 1.0
        for t, tok in enumerate(seq):
            prob *= self.conditional(seq[:t])[tok]
        return prob

    def prefixes(self) -> Iterator[Sequence]:
        """All prefixes the table covers, shortest first."""
        for length in range(self.max_depth):
            yield from product(range(self.vocab_size), repeat=length)

    def n_prefixes(self) -> int:
        return sum(self.vocab_size**length for length in range(self.max_depth))

    def to_json(self) -> str:
        """Serialise as ``{vocab_size, max_depth, table}`` with exact floats.

        Keys are the prefix token arrays rendered as JSON; values round-trip
        bit-exactly because floats are printed with shortest-repr precision.
        """
        if self.n_prefixes() > MAX_SERIALIZABLE_PREFIXES:
            raise ValueError(
                f"model with {self.n_prefixes()} prefixes is too large to serialise "
                f"(limit {MAX_SERIALIZABLE_PREFIXES})"
            )
        table = {json.dumps(list(prefix)): list(self.conditional(prefix)) for prefix in self.prefixes()}
        return json.dumps({"vocab_size": self.vocab_size, "max_depth": self.max_depth, "table": table})

    @classmethod
    def from_json(cls, doc: str) -> "TableArModel":
        data = json.loads(doc)
        table = {tuple(json.loads(key)): tuple(dist) for key, dist in data["table"].items()}
        model = cls(data["vocab_size"], data["max_depth"], table=table)
        if len(table) != model.n_prefixes():
            raise ValueError(f"table has {len(table)} prefixes, expected {model.n_prefixes()}")
        return model


def generate_model_pair(spec: ModelPairSpec) -> tuple[TableArModel, TableArModel]:
    """Build the seeded (target, draft) pair described by ``spec``.

    Target conditionals are softmaxes of i.i.d. normal logits scaled by the
    concentration; draft conditionals re-softmax the same logits after adding
    a zero-mean perturbation of magnitude ``divergence_knob``.  Deterministic
    for a fixed seed, and a zero knob reproduces the target bit for bit.
    """
    spec.validate()
    vocab, eps, conc, seed = spec.vocab_size, spec.divergence_knob, spec.concentration, spec.seed

    def logits_for(prefix: Sequence) -> np.ndarray:
        rng = substream(seed, _STREAM_LOGITS, len(prefix), *prefix)
        return conc * rng.standard_normal(vocab)

    def target_gen(prefix: Sequence) -> Dist:
        return _softmax(logits_for(prefix))

    def draft_gen(prefix: Sequence) -> Dist:
        logits = logits_for(prefix)
        if eps != 0.0:
            noise = substream(seed, _STREAM_NOISE, len(prefix), *prefix).standard_normal(vocab)
            logits = logits + eps * noise
        return _softmax(logits)

    p = TableArModel(vocab, spec.max_depth, generator=target_gen)
    q = TableArModel(vocab, spec.max_depth, generator=draft_gen)
    return p, q


@dataclass(frozen=True, slots=True)
class DraftTrace:
    """A drafted token block plus every distribution a verifier may touch.

    ``q_dists[t]`` and ``p_dists[t]`` are the draft and target conditionals
    at position ``t + 1`` given ``prefix + tokens[:t]``.  ``bonus_dist`` is
    the target conditional after the full block, present when the model depth
    allows one more token.
    """

    prefix: Sequence
    tokens: Sequence
    q_dists: tuple[Dist, ...]
    p_dists: tuple[Dist, ...]
    bonus_dist: Dist | None

    @property
    def gamma(self) -> int:
        return len(self.tokens)


def trace_for(
    q: TableArModel,
    p: TableArModel,
    prefix: Sequence,
    tokens: Sequence,
) -> DraftTrace:
    """Assemble the trace for a given (already chosen) token block."""
    prefix, tokens = tuple(prefix), tuple(tokens)
    if q.vocab_size != p.vocab_size:
        raise ValueError(f"vocab mismatch: draft {q.vocab_size} vs target {p.vocab_size}")
    depth = min(q.max_depth, p.max_depth)
    if len(prefix) + len(tokens) > depth:
        raise ValueError(f"prefix({len(prefix)}) + draft({len(tokens)}) exceeds model depth {depth}")
    q_dists, p_dists = [], []
    for t in range(len(tokens)):
        context = prefix + tokens[:t]
        q_dists.append(q.conditional(context))
        p_dists.append(p.conditional(context))
    bonus = None
    if len(prefix) + len(tokens) < p.max_depth:
        bonus = p.conditional(prefix + tokens)
    return DraftTrace(prefix, tokens, tuple(q_dists), tuple(p_dists), bonus)


def sample_draft(
    q: TableArModel,
    p: TableArModel,
    prefix: Sequence,
    gamma: int,
    rng: np.random.Generator,
) -> DraftTrace:
    """Draw ``gamma`` tokens ancestrally from the draft model.

    Records the full draft and target conditionals at every position (and the
    bonus target conditional when depth permits), which is exactly the
    information available to a verifier after one draft + one target pass.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if q.vocab_size != p.vocab_size:
        raise ValueError(f"vocab mismatch: draft {q.vocab_size} vs target {p.vocab_size}")
    prefix = tuple(prefix)
    if len(prefix) + gamma > min(q.max_depth, p.max_depth):
        raise ValueError(f"prefix({len(prefix)}) + draft({gamma}) exceeds model depth")
    context = prefix
    q_dists, p_dists = [], []
    for _ in range(gamma):
        q_dist = q.conditional(context)
        q_dists.append(q_dist)
        p_dists.append(p.conditional(context))
        context = context + (index_from_uniform(q_dist, rng.random()),)
    bonus = p.conditional(context) if len(context) < p.max_depth else None
    return DraftTrace(prefix, context[len(prefix):], tuple(q_dists), tuple(p_dists), bonus)
