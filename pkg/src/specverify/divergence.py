"""Divergence and prefix-ratio machinery for draft verification.

Everything here is pure arithmetic over exact model probabilities: deficient
and excess mass between target and draft (per token, per branch, and per
branch with the maximal prefix ratio capped), plus the per-position ratio
chain that drives the verifiers.  Branch sums use ``math.fsum`` throughout,
so accumulation order never affects results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .models import Dist, DraftTrace, Sequence, TableArModel


def generalized_divergence(p: Dist, q: Dist, subset: Iterable[int]) -> float:
    """Deficient mass of ``q`` relative to ``p`` over a subset of outcomes.

    On the full outcome space this is symmetric in its arguments and equals
    half the L1 distance; on proper subsets it is genuinely directional.
    """
    if len(p) != len(q):
        raise ValueError(f"distribution lengths differ: {len(p)} vs {len(q)}")
    terms = []
    for w in subset:
        if not 0 <= w < len(p):
            raise ValueError(f"outcome {w} out of range [0, {len(p)})")
        terms.append(max(p[w] - q[w], 0.0))
    return math.fsum(terms)


@dataclass(frozen=True)
class BranchDivergences:
    """Deficient/excess joint mass over the one-token extensions of a prefix."""

    d_pq: float
    d_qp: float

    @property
    def asymmetry(self) -> float:
        return self.d_pq - self.d_qp


def branch_divergences(p_model: TableArModel, q_model: TableArModel, prefix: Sequence) -> BranchDivergences:
    """Branch divergences at ``prefix``, from exact joint probabilities.

    The asymmetry of the result equals p(prefix) - q(prefix): excess and
    deficient mass over a branch can only differ by the gap already present
    at its root.
    """
    prefix = tuple(prefix)
    if len(prefix) >= min(p_model.max_depth, q_model.max_depth):
        raise ValueError(f"prefix of length {len(prefix)} leaves no room for extensions")
    pj = p_model.joint(prefix)
    qj = q_model.joint(prefix)
    p_cond = p_model.conditional(prefix)
    q_cond = q_model.conditional(prefix)
    deficits, excesses = [], []
    for x in range(p_model.vocab_size):
        gap = pj * p_cond[x] - qj * q_cond[x]
        if gap > 0.0:
            deficits.append(gap)
        else:
            excesses.append(-gap)
    return BranchDivergences(math.fsum(deficits), math.fsum(excesses))


def hierarchy_check(p_model: TableArModel, q_model: TableArModel, prefix: Sequence) -> tuple[float, float]:
    """Positive child asymmetries summed against the parent's deficient mass.

    Returns ``(lhs, rhs)`` where lhs aggregates the positive asymmetry over
    every child branch of ``prefix`` and rhs is the parent branch's deficient
    mass; the two are equal.  Swapping the model arguments checks the mirror
    identity for excess mass.
    """
    prefix = tuple(prefix)
    if len(prefix) + 2 > min(p_model.max_depth, q_model.max_depth):
        raise ValueError(f"prefix of length {len(prefix)} leaves no room for child branches")
    positives = []
    for x in range(p_model.vocab_size):
        child = branch_divergences(p_model, q_model, prefix + (x,))
        if child.asymmetry > 0.0:
            positives.append(child.asymmetry)
    lhs = math.fsum(positives)
    rhs = branch_divergences(p_model, q_model, prefix).d_pq
    return lhs, rhs


@dataclass(frozen=True)
class RatioChain:
    """Per-position ratio data along a drafted block, all 0-indexed by position.

    ``cond_r[t]`` is the target/draft conditional ratio of the drafted token
    at position ``t + 1``; ``r[t]`` the cumulative joint ratio; ``m[t]`` the
    1-based index of the maximal strict-prefix ratio exceeding 1 (0 when none
    does); ``rstar[t]`` the joint ratio with that maximal prefix factor capped
    at 1, and ``clamped_rstar[t] = min(rstar[t], 1)``.
    """

    cond_r: tuple[float, ...]
    r: tuple[float, ...]
    m: tuple[int, ...]
    rstar: tuple[float, ...]
    clamped_rstar: tuple[float, ...]

    @property
    def gamma(self) -> int:
        return len(self.r)


def ratio_chain_from_conditionals(p_cond: Iterable[float], q_cond: Iterable[float]) -> RatioChain:
    """Build the ratio chain from the drafted tokens' conditional probabilities.

    A zero draft probability anywhere on the path is an error (such a block
    cannot have been drafted); a zero target probability sends the joint
    ratio to 0, where it stays.  Ties in the maximal prefix ratio resolve to
    the latest position.
    """
    p_cond, q_cond = list(p_cond), list(q_cond)
    if len(p_cond) != len(q_cond):
        raise ValueError(f"conditional lists differ in length: {len(p_cond)} vs {len(q_cond)}")
    if not p_cond:
        raise ValueError("empty draft has no ratio chain")
    cond_r, r, m, rstar, clamped = [], [], [], [], []
    r_prev = 1.0
    best_val, best_idx = 1.0, 0  # running maximum of r over earlier positions, where it exceeds 1
    for t in range(1, len(p_cond) + 1):
        pc, qc = p_cond[t - 1], q_cond[t - 1]
        if qc <= 0.0:
            raise ValueError(f"zero draft probability at position {t} along the drafted path")
        cr = pc / qc
        r_t = r_prev * cr
        m_t = best_idx
        rs = r_t / (best_val if best_idx > 0 else 1.0)
        cond_r.append(cr)
        r.append(r_t)
        m.append(m_t)
        rstar.append(rs)
        clamped.append(min(rs, 1.0))
        if r_t > 1.0 and r_t >= best_val:
            best_val, best_idx = r_t, t
        r_prev = r_t
    return RatioChain(tuple(cond_r), tuple(r), tuple(m), tuple(rstar), tuple(clamped))


def ratio_chain(trace: DraftTrace) -> RatioChain:
    """Ratio chain of a trace's drafted tokens."""
    p_cond = [trace.p_dists[t][tok] for t, tok in enumerate(trace.tokens)]
    q_cond = [trace.q_dists[t][tok] for t, tok in enumerate(trace.tokens)]
    return ratio_chain_from_conditionals(p_cond, q_cond)


def joint_products(trace: DraftTrace) -> tuple[list[float], list[float]]:
    """Cumulative target/draft joints along the drafted block.

    Returns ``(p_cum, q_cum)`` with ``p_cum[t]`` the target joint of the
    first ``t`` drafted tokens given the trace prefix (``p_cum[0] == 1``).
    """
    p_cum, q_cum = [1.0], [1.0]
    for t, tok in enumerate(trace.tokens):
        p_cum.append(p_cum[-1] * trace.p_dists[t][tok])
        q_cum.append(q_cum[-1] * trace.q_dists[t][tok])
    return p_cum, q_cum


def capped_branch_masses(
    trace: DraftTrace,
    chain: RatioChain,
    t: int,
    cums: tuple[list[float], list[float]] | None = None,
) -> tuple[list[float], list[float]]:
    """Capped hybrid mass and draft mass for each extension of the first ``t`` tokens.

    For extension token x at position ``t + 1`` the capped prefix ratio uses
    the branch's shared maximal-prefix index, so its mass factors as
    ``q(X_{1:m}) * p(X_{m+1:t}) * p(x | X_{1:t})`` against the plain draft
    joint ``q(X_{1:t}) * q(x | X_{1:t})``.  This form stays finite when the
    draft assigns an extension zero probability.  ``cums`` lets callers in a
    scan loop reuse one :func:`joint_products` result.
    """
    if not 0 <= t < trace.gamma:
        raise ValueError(f"branch position {t} outside [0, {trace.gamma})")
    mb = chain.m[t]  # maximal-prefix index shared by all (t+1)-length extensions
    p_cum, q_cum = cums if cums is not None else joint_products(trace)
    hybrid = q_cum[mb] * (p_cum[t] / p_cum[mb])
    base_q = q_cum[t]
    p_next, q_next = trace.p_dists[t], trace.q_dists[t]
    a = [hybrid * px for px in p_next]
    b = [base_q * qx for qx in q_next]
    return a, b


@dataclass(frozen=True)
class CappedBranchDivergences:
    """Deficient/excess mass over a branch after capping the maximal prefix ratio."""

    dstar_pq: float
    dstar_qp: float


def capped_branch_divergences(trace: DraftTrace, t: int) -> CappedBranchDivergences:
    """Capped branch divergences at the branch of the first ``t`` drafted tokens.

    Computable from the trace alone: the capped ratio of every vocabulary
    extension reuses the accepted prefix's chain, which is the whole point of
    the capping construction.
    """
    chain = ratio_chain(trace)
    a, b = capped_branch_masses(trace, chain, t)
    dstar_pq = math.fsum(max(ai - bi, 0.0) for ai, bi in zip(a, b))
    dstar_qp = math.fsum(max(bi - ai, 0.0) for ai, bi in zip(a, b))
    return CappedBranchDivergences(dstar_pq, dstar_qp)


def unique_capping_indices(chain: RatioChain) -> tuple[int, ...]:
    """Ordered distinct positive maximal-prefix indices of a chain.

    These are the record positions where the running joint ratio sets a new
    maximum above 1; resampling mass concentrates exactly there.
    """
    return tuple(sorted({idx for idx in chain.m if idx > 0}))
