"""Draft verification strategies over table models.

Four single-draft verifiers are implemented: tokenwise accept/resample,
branch resampling in its naive form (which must query the models off the
drafted path), branch resampling with the maximal prefix ratio capped (which
needs nothing beyond the trace), and blockwise acceptance to chain depth.
Two multi-draft variants layer recursive rejection sampling with replacement
on top of the tokenwise and capped verifiers.

Every verifier consumes one uniform per decision, drawn in scan order, so a
trajectory can be replayed from its event log.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .divergence import (
    RatioChain,
    capped_branch_masses,
    joint_products,
    ratio_chain,
)
from .models import Dist, DraftTrace, Sequence, TableArModel, index_from_uniform

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Event:
    """One verification decision: which position, what happened, at what odds."""

    position: int
    kind: str  # accept | reject | resample | bonus
    prob: float | None = None
    u: float | None = None


def events_to_jsonl(trial: int, events: tuple[Event, ...]) -> str:
    """Render an event log as JSON lines for offline debugging."""
    lines = [
        json.dumps({"trial": trial, "position": e.position, "kind": e.kind, "h": e.prob, "u": e.u})
        for e in events
    ]
    return "\n".join(lines)


@dataclass(frozen=True, slots=True)
class VerifyOutcome:
    """Accepted prefix length, emitted tokens, and the decision log."""

    tau: int
    emitted: Sequence
    events: tuple[Event, ...]


@dataclass(frozen=True)
class AcceptanceChain:
    """Per-position acceptance probabilities of one verifier for one trace.

    ``h[t]`` (0-indexed) governs acceptance of the drafted prefix of length
    ``t + 1``.
    """

    method: str
    h: tuple[float, ...]


def _draw(dist: Dist, rng: np.random.Generator) -> tuple[int, float]:
    u = rng.random()
    return index_from_uniform(dist, u), u


def _emit_bonus(bonus: Dist | None, position: int, rng: np.random.Generator, events: list[Event]) -> int:
    if bonus is None:
        raise ValueError("full draft accepted but the trace has no bonus distribution")
    tok, u = _draw(bonus, rng)
    events.append(Event(position, "bonus", bonus[tok], u))
    return tok


def backward_scan(h: tuple[float, ...], rng: np.random.Generator) -> tuple[int, list[Event]]:
    """Scan positions from the end, accepting the longest surviving prefix."""
    events: list[Event] = []
    for t in range(len(h), 0, -1):
        u = rng.random()
        if u < h[t - 1]:
            events.append(Event(t, "accept", h[t - 1], u))
            return t, events
        events.append(Event(t, "reject", h[t - 1], u))
    return 0, events


def forward_scan(h: tuple[float, ...], rng: np.random.Generator) -> tuple[int, list[Event]]:
    """Scan positions from the front, stopping at the first rejection."""
    events: list[Event] = []
    for t in range(1, len(h) + 1):
        u = rng.random()
        if u < h[t - 1]:
            events.append(Event(t, "accept", h[t - 1], u))
            continue
        events.append(Event(t, "reject", h[t - 1], u))
        return t - 1, events
    return len(h), events


# ---------------------------------------------------------------------------
# Residual (resampling) distributions
# ---------------------------------------------------------------------------


def tokenwise_residual(p_dist: Dist, q_dist: Dist) -> Dist:
    """Normalised target-minus-draft excess over one branch's conditionals."""
    num = [max(pi - qi, 0.0) for pi, qi in zip(p_dist, q_dist)]
    den = math.fsum(num)
    if den <= 0.0:
        raise ValueError("degenerate residual: target nowhere exceeds draft on this branch")
    return tuple(n / den for n in num)


def naive_branch_residual(p_model: TableArModel, q_model: TableArModel, context: Sequence) -> Dist:
    """Branch resampling distribution from exact joints, valid off the drafted path."""
    context = tuple(context)
    pj, qj = p_model.joint(context), q_model.joint(context)
    p_cond, q_cond = p_model.conditional(context), q_model.conditional(context)
    num = [max(pj * pc - qj * qc, 0.0) for pc, qc in zip(p_cond, q_cond)]
    den = math.fsum(num)
    if den <= 0.0:
        raise ValueError(f"degenerate branch residual at context {context}")
    return tuple(n / den for n in num)


def capped_branch_residual(
    trace: DraftTrace,
    chain: RatioChain,
    t: int,
    cums: tuple[list[float], list[float]] | None = None,
) -> Dist:
    """Single-step resampling distribution over the branch of the first ``t`` tokens."""
    a, b = capped_branch_masses(trace, chain, t, cums)
    num = [max(ai - bi, 0.0) for ai, bi in zip(a, b)]
    den = math.fsum(num)
    if den <= 0.0:
        raise ValueError(f"degenerate capped residual at a reached resample point (t={t})")
    return tuple(n / den for n in num)


# ---------------------------------------------------------------------------
# Acceptance chains
# ---------------------------------------------------------------------------


def tokenwise_chain(trace: DraftTrace) -> AcceptanceChain:
    """Per-position conditional-ratio acceptance, clamped to 1."""
    chain = ratio_chain(trace)
    return AcceptanceChain("tokenwise", tuple(min(cr, 1.0) for cr in chain.cond_r))


def _naive_h(d_pq: float, d_qp: float) -> float:
    den = max(d_pq, d_qp)
    if den <= 0.0:
        return 1.0  # locally identical distributions: nothing to correct
    return d_pq / den


def naive_hsd_chain(trace: DraftTrace) -> AcceptanceChain:
    """Acceptance chain of the naive branch-resampling verifier."""
    chain = ratio_chain(trace)
    p_cum, q_cum = joint_products(trace)
    gamma = trace.gamma
    h = []
    for t in range(1, gamma + 1):
        if t == gamma:
            h.append(min(chain.r[gamma - 1], 1.0))
            break
        deficits, excesses = [], []
        p_next, q_next = trace.p_dists[t], trace.q_dists[t]
        for px, qx in zip(p_next, q_next):
            gap = p_cum[t] * px - q_cum[t] * qx
            if gap > 0.0:
                deficits.append(gap)
            else:
                excesses.append(-gap)
        h.append(_naive_h(math.fsum(deficits), math.fsum(excesses)))
    return AcceptanceChain("naive-hsd", tuple(h))


def _capped_h(dstar_pq: float, dstar_qp: float, t: int) -> float:
    if dstar_qp <= 0.0:
        if dstar_pq > 0.0:
            logger.warning("capped branch at position %d has excess 0 but deficit %g; accepting", t, dstar_pq)
        return 1.0
    return min(dstar_pq / dstar_qp, 1.0)


def _capped_h_values(
    trace: DraftTrace,
    chain: RatioChain,
    cums: tuple[list[float], list[float]],
) -> tuple[float, ...]:
    gamma = trace.gamma
    h = []
    for t in range(1, gamma + 1):
        if t == gamma:
            h.append(chain.clamped_rstar[gamma - 1])
            break
        a, b = capped_branch_masses(trace, chain, t, cums)
        dstar_pq = math.fsum(max(ai - bi, 0.0) for ai, bi in zip(a, b))
        dstar_qp = math.fsum(max(bi - ai, 0.0) for ai, bi in zip(a, b))
        h.append(_capped_h(dstar_pq, dstar_qp, t))
    return tuple(h)


def capped_hsd_chain(trace: DraftTrace) -> AcceptanceChain:
    """Acceptance chain of the capped branch-resampling verifier."""
    chain = ratio_chain(trace)
    return AcceptanceChain("capped-hsd", _capped_h_values(trace, chain, joint_products(trace)))


def blockwise_acceptance_chain(trace: DraftTrace) -> AcceptanceChain:
    """Acceptance chain of blockwise verification.

    Tracks the running clamp ``p_t = min(p_{t-1} * cond_r[t], 1)`` and checks
    it against its suffix-minimum closed form before using it; the final
    position accepts with ``p_gamma`` itself.
    """
    chain = ratio_chain(trace)
    gamma = trace.gamma
    clamp = [1.0]
    for cr in chain.cond_r:
        clamp.append(min(clamp[-1] * cr, 1.0))
    for t in range(gamma + 1):
        best = 1.0
        for s in range(t):
            prod = 1.0
            for i in range(s, t):
                prod = prod * chain.cond_r[i]
            best = min(best, prod)
        if abs(clamp[t] - best) > 1e-12:
            raise AssertionError(f"clamp recursion {clamp[t]!r} disagrees with suffix minimum {best!r} at {t}")
    h = []
    for t in range(1, gamma + 1):
        if t == gamma:
            h.append(clamp[gamma])
            break
        pt = clamp[t]
        num = math.fsum(
            max(pt * px - qx, 0.0) for px, qx in zip(trace.p_dists[t], trace.q_dists[t])
        )
        den = num + (1.0 - pt)
        h.append(1.0 if den <= 0.0 else num / den)
    return AcceptanceChain("blockwise", tuple(h))


def expected_accept_length(chain: AcceptanceChain, mode: str) -> float:
    """Expected accepted prefix length implied by an acceptance chain.

    ``token`` mode sums running products (front scan with stopping);
    ``backward`` mode sums tail survival probabilities (backward scan).
    """
    h = chain.h
    if mode == "token":
        terms = []
        prod = 1.0
        for v in h:
            prod *= v
            terms.append(prod)
        return math.fsum(terms)
    if mode == "backward":
        terms = []
        tail = 1.0
        for v in reversed(h):
            tail *= 1.0 - v
            terms.append(1.0 - tail)
        return math.fsum(terms)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Single-draft verifiers
# ---------------------------------------------------------------------------


def tokenwise_verify(trace: DraftTrace, rng: np.random.Generator) -> VerifyOutcome:
    """Front-to-back accept/resample verification of one drafted block."""
    h = tokenwise_chain(trace).h
    tau, events = forward_scan(h, rng)
    emitted = list(trace.tokens[:tau])
    if tau == trace.gamma:
        emitted.append(_emit_bonus(trace.bonus_dist, trace.gamma + 1, rng, events))
    else:
        residual = tokenwise_residual(trace.p_dists[tau], trace.q_dists[tau])
        tok, u = _draw(residual, rng)
        events.append(Event(tau + 1, "resample", residual[tok], u))
        emitted.append(tok)
    return VerifyOutcome(tau, tuple(emitted), tuple(events))


def naive_hsd_verify(
    trace: DraftTrace,
    p_model: TableArModel,
    q_model: TableArModel,
    rng: np.random.Generator,
) -> VerifyOutcome:
    """Backward-scan branch verification with sequential branch resampling.

    On any rejection this resamples every position from the accepted prefix
    through the end of the block, querying both models at prefixes off the
    drafted path; the output is then the full block length with no bonus
    token.  Only a fully accepted draft earns the bonus, so emitted length is
    gamma + 1 exactly when tau == gamma and gamma otherwise.
    """
    h = naive_hsd_chain(trace).h
    tau, events = backward_scan(h, rng)
    emitted = list(trace.tokens[:tau])
    if tau == trace.gamma:
        emitted.append(_emit_bonus(trace.bonus_dist, trace.gamma + 1, rng, events))
    else:
        context = trace.prefix + trace.tokens[:tau]
        for t in range(tau, trace.gamma):
            residual = naive_branch_residual(p_model, q_model, context)
            tok, u = _draw(residual, rng)
            events.append(Event(t + 1, "resample", residual[tok], u))
            emitted.append(tok)
            context = context + (tok,)
    return VerifyOutcome(tau, tuple(emitted), tuple(events))


def capped_hsd_verify(trace: DraftTrace, rng: np.random.Generator) -> VerifyOutcome:
    """Backward-scan branch verification with one capped resampling step.

    Needs nothing beyond the trace: acceptance probabilities and the single
    residual draw all live on branches reachable from the drafted path.
    Emits the accepted prefix plus exactly one token (resampled or bonus).
    """
    chain = ratio_chain(trace)
    cums = joint_products(trace)
    h = _capped_h_values(trace, chain, cums)
    tau, events = backward_scan(h, rng)
    emitted = list(trace.tokens[:tau])
    if tau == trace.gamma:
        emitted.append(_emit_bonus(trace.bonus_dist, trace.gamma + 1, rng, events))
    else:
        residual = capped_branch_residual(trace, chain, tau, cums)
        tok, u = _draw(residual, rng)
        events.append(Event(tau + 1, "resample", residual[tok], u))
        emitted.append(tok)
    return VerifyOutcome(tau, tuple(emitted), tuple(events))


# ---------------------------------------------------------------------------
# Multi-draft verifiers
# ---------------------------------------------------------------------------


def _check_shared(traces: list[DraftTrace]) -> tuple[Sequence, int]:
    if not traces:
        raise ValueError("need at least one draft trace")
    prefix, gamma = traces[0].prefix, traces[0].gamma
    for tr in traces[1:]:
        if tr.prefix != prefix:
            raise ValueError("draft traces do not share a prefix")
        if tr.gamma != gamma:
            raise ValueError("draft traces differ in length")
    if gamma == 0:
        raise ValueError("empty drafts cannot be verified")
    return prefix, gamma


def multidraft_hsd_verify(traces: list[DraftTrace], rng: np.random.Generator) -> VerifyOutcome:
    """Capped branch verification over several independent drafts.

    Drafts are tried in order.  One that does not extend the currently
    accepted prefix is skipped; otherwise its suffix is scanned backward with
    the capped acceptance rule.  After each failed extension the target
    conditional at the next position is replaced by the capped residual, so
    later drafts are verified against what is left of the target mass; the
    final fallback samples from that residual directly.
    """
    prefix, gamma = _check_shared(traces)
    accepted: tuple[int, ...] = ()
    tau = 0
    override: Dist | None = None
    events: list[Event] = []
    for tr in traces:
        if tr.tokens[: tau] != accepted:
            continue  # prefix mismatch, skip this draft
        if tau == 0 and override is None:
            sub = tr
        else:
            p_dists = list(tr.p_dists[tau:])
            if override is not None:
                p_dists[0] = override
            sub = DraftTrace(
                prefix + accepted,
                tr.tokens[tau:],
                tr.q_dists[tau:],
                tuple(p_dists),
                tr.bonus_dist,
            )
        chain = ratio_chain(sub)
        cums = joint_products(sub)
        h = _capped_h_values(sub, chain, cums)
        base = tau
        t_local, scan_events = backward_scan(h, rng)
        if base == 0:
            events.extend(scan_events)
        else:
            events.extend(Event(e.position + base, e.kind, e.prob, e.u) for e in scan_events)
        if t_local > 0:
            tau = base + t_local
            accepted = tr.tokens[:tau]
        if tau == gamma:
            emitted = list(accepted)
            emitted.append(_emit_bonus(tr.bonus_dist, gamma + 1, rng, events))
            return VerifyOutcome(tau, tuple(emitted), tuple(events))
        override = capped_branch_residual(sub, chain, t_local, cums)
    tok, u = _draw(override, rng)
    events.append(Event(tau + 1, "resample", override[tok], u))
    return VerifyOutcome(tau, tuple(accepted) + (tok,), tuple(events))


def multidraft_tokenwise_verify(traces: list[DraftTrace], rng: np.random.Generator) -> VerifyOutcome:
    """Per-position recursive rejection sampling with replacement over drafts.

    At each position every draft that still extends the accepted prefix gets
    one tokenwise try against the running residual target; each rejection
    subtracts the draft conditional and renormalises.  When all tries fail
    the position is filled from the residual and verification stops.
    """
    _, gamma = _check_shared(traces)
    accepted: tuple[int, ...] = ()
    events: list[Event] = []
    last_match: DraftTrace | None = None
    for t in range(gamma):
        candidates = [tr for tr in traces if tr.tokens[:t] == accepted]
        p_cur: Dist = candidates[0].p_dists[t]
        accepted_tok: int | None = None
        for tr in candidates:
            x = tr.tokens[t]
            qd = tr.q_dists[t]
            if qd[x] <= 0.0:
                raise ValueError(f"draft token {x} at position {t + 1} has zero draft probability")
            h = min(1.0, p_cur[x] / qd[x])
            u = rng.random()
            if u < h:
                events.append(Event(t + 1, "accept", h, u))
                accepted_tok = x
                last_match = tr
                break
            events.append(Event(t + 1, "reject", h, u))
            p_cur = tokenwise_residual(p_cur, qd)
        if accepted_tok is None:
            tok, u = _draw(p_cur, rng)
            events.append(Event(t + 1, "resample", p_cur[tok], u))
            return VerifyOutcome(t, accepted + (tok,), tuple(events))
        accepted = accepted + (accepted_tok,)
    emitted = list(accepted)
    emitted.append(_emit_bonus(last_match.bonus_dist, gamma + 1, rng, events))
    return VerifyOutcome(gamma, tuple(emitted), tuple(events))
