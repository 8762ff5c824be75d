"""Ground-truth certification of verifier losslessness.

:func:`enumerate_yield` computes, exactly, the probability of every
full-length output sequence under a verifier by folding over all possible
drafts: scan decisions are treated analytically (they are independent
uniforms), while resampling and target continuations fan out term by term.
Comparing that yield against the target joint certifies or refutes
losslessness to floating-point precision.  :func:`monte_carlo_fit` is the
statistical fallback for configurations where enumeration is infeasible,
such as multi-draft verification.

Both entry points accept an optional ``mutate`` knob that corrupts the
acceptance chain on purpose; a healthy test suite must catch every mutation.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .divergence import capped_branch_masses, joint_products, ratio_chain
from .models import (
    DraftTrace,
    Sequence,
    TableArModel,
    sample_draft,
    sample_index,
    substream,
    trace_for,
)
from .verify import (
    VerifyOutcome,
    backward_scan,
    capped_branch_residual,
    capped_hsd_chain,
    capped_hsd_verify,
    forward_scan,
    multidraft_hsd_verify,
    multidraft_tokenwise_verify,
    naive_branch_residual,
    naive_hsd_chain,
    naive_hsd_verify,
    tokenwise_chain,
    tokenwise_residual,
    tokenwise_verify,
    Event,
    _draw,
    _emit_bonus,
)

ENUMERATION_GUARD = 100_000
SINGLE_DRAFT_VERIFIERS = ("tokenwise", "naive-hsd", "capped-hsd")
MULTI_DRAFT_VERIFIERS = ("multidraft-tokenwise", "multidraft-hsd")
MUTATIONS = ("h-double", "unclamp")


@dataclass(frozen=True)
class YieldDistribution:
    """Exact probability of each full-length output sequence."""

    probs: dict[Sequence, float]
    length: int

    def total(self) -> float:
        return math.fsum(self.probs.values())


def target_joint_distribution(p_model: TableArModel, length: int) -> YieldDistribution:
    """The target joint over all sequences of a fixed length."""
    if p_model.vocab_size**length > ENUMERATION_GUARD:
        raise ValueError(f"{p_model.vocab_size}^{length} sequences exceed the enumeration guard")
    probs = {seq: p_model.joint(seq) for seq in product(range(p_model.vocab_size), repeat=length)}
    return YieldDistribution(probs, length)


def total_variation(a: YieldDistribution, b: YieldDistribution) -> float:
    """Half the L1 distance between two yield distributions."""
    if a.length != b.length:
        raise ValueError(f"length mismatch: {a.length} vs {b.length}")
    keys = set(a.probs) | set(b.probs)
    return 0.5 * math.fsum(abs(a.probs.get(k, 0.0) - b.probs.get(k, 0.0)) for k in keys)


def _tau_probs_backward(h: tuple[float, ...]) -> list[float]:
    gamma = len(h)
    pr = [0.0] * (gamma + 1)
    tail = 1.0
    for t in range(gamma, 0, -1):
        pr[t] = h[t - 1] * tail
        tail *= 1.0 - h[t - 1]
    pr[0] = tail
    return pr


def _tau_probs_forward(h: tuple[float, ...]) -> list[float]:
    gamma = len(h)
    pr = [0.0] * (gamma + 1)
    run = 1.0
    for t in range(1, gamma + 1):
        pr[t - 1] = run * (1.0 - h[t - 1])
        run *= h[t - 1]
    pr[gamma] = run
    return pr


def _apply_mutation(h: tuple[float, ...], mutate: str | None) -> tuple[float, ...]:
    if mutate is None or mutate == "unclamp":
        return h
    if mutate == "h-double":
        return tuple(min(2.0 * v, 1.0) for v in h)
    raise ValueError(f"unknown mutation {mutate!r}; expected one of {MUTATIONS}")


def _unclamped_capped_h(trace: DraftTrace, chain, cums) -> tuple[float, ...]:
    """The capped acceptance ratios without the clamp to [0, 1]."""
    gamma = trace.gamma
    h = []
    for t in range(1, gamma + 1):
        if t == gamma:
            h.append(chain.rstar[gamma - 1])
            break
        a, b = capped_branch_masses(trace, chain, t, cums)
        dstar_pq = math.fsum(max(ai - bi, 0.0) for ai, bi in zip(a, b))
        dstar_qp = math.fsum(max(bi - ai, 0.0) for ai, bi in zip(a, b))
        h.append(1.0 if dstar_qp <= 0.0 else dstar_pq / dstar_qp)
    return tuple(h)


def enumerate_yield(
    verifier: str,
    p_model: TableArModel,
    q_model: TableArModel,
    gamma: int,
    length: int | None = None,
    mutate: str | None = None,
) -> YieldDistribution:
    """Exact yield distribution of a single-draft verifier.

    Folds over every draft of length ``gamma`` (weighted by its draft joint),
    the analytic accepted-length law of the verifier's scan, every resampling
    outcome, and target continuations out to ``length``.
    """
    if verifier not in SINGLE_DRAFT_VERIFIERS:
        raise ValueError(f"unknown verifier {verifier!r}; expected one of {SINGLE_DRAFT_VERIFIERS}")
    if mutate is not None and mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutate!r}; expected one of {MUTATIONS}")
    if mutate == "unclamp" and verifier != "capped-hsd":
        raise ValueError("the unclamp mutation only applies to capped-hsd")
    vocab = p_model.vocab_size
    L = gamma if length is None else length
    if L < gamma:
        raise ValueError(f"length {L} shorter than draft length {gamma}")
    if vocab**gamma > ENUMERATION_GUARD:
        raise ValueError(f"{vocab}^{gamma} drafts exceed the enumeration guard ({ENUMERATION_GUARD})")
    if min(p_model.max_depth, q_model.max_depth) < L:
        raise ValueError(f"models of depth < {L} cannot be enumerated to that length")

    acc: dict[Sequence, float] = defaultdict(float)

    def extend_with_target(seq: Sequence, weight: float) -> None:
        if len(seq) == L:
            acc[seq] += weight
            return
        for tok, pc in enumerate(p_model.conditional(seq)):
            if pc > 0.0:
                extend_with_target(seq + (tok,), weight * pc)

    def fan_naive_resamples(context: Sequence, weight: float) -> None:
        if len(context) == gamma:
            extend_with_target(context, weight)
            return
        residual = naive_branch_residual(p_model, q_model, context)
        for tok, pr in enumerate(residual):
            if pr > 0.0:
                fan_naive_resamples(context + (tok,), weight * pr)

    for draft in product(range(vocab), repeat=gamma):
        q_joint = q_model.joint(draft)
        if q_joint == 0.0:
            continue
        trace = trace_for(q_model, p_model, (), draft)
        chain = ratio_chain(trace)
        cums = joint_products(trace)
        if verifier == "tokenwise":
            h = tokenwise_chain(trace).h
            tau_probs = _tau_probs_forward(_apply_mutation(h, mutate))
        elif verifier == "naive-hsd":
            h = naive_hsd_chain(trace).h
            tau_probs = _tau_probs_backward(_apply_mutation(h, mutate))
        else:
            if mutate == "unclamp":
                h = _unclamped_capped_h(trace, chain, cums)
            else:
                h = _apply_mutation(capped_hsd_chain(trace).h, mutate)
            tau_probs = _tau_probs_backward(h)
        for tau, pr_tau in enumerate(tau_probs):
            weight = q_joint * pr_tau
            if weight == 0.0:
                continue
            if tau == gamma:
                extend_with_target(draft, weight)
            elif verifier == "tokenwise":
                residual = tokenwise_residual(trace.p_dists[tau], trace.q_dists[tau])
                for tok, pr in enumerate(residual):
                    if pr > 0.0:
                        extend_with_target(draft[:tau] + (tok,), weight * pr)
            elif verifier == "naive-hsd":
                fan_naive_resamples(draft[:tau], weight)
            else:
                residual = capped_branch_residual(trace, chain, tau, cums)
                for tok, pr in enumerate(residual):
                    if pr > 0.0:
                        extend_with_target(draft[:tau] + (tok,), weight * pr)
    return YieldDistribution(dict(acc), L)


# ---------------------------------------------------------------------------
# Monte Carlo goodness of fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitReport:
    """Outcome of a Monte Carlo goodness-of-fit run, with its thresholds."""

    verifier: str
    vocab_size: int
    gamma: int
    length: int
    seed: int
    trials: int
    k_drafts: int
    mutate: str | None
    tv: float
    tv_bound: float
    max_z: float
    z_bound: float
    z_violations: int
    worst_sequence: Sequence
    worst_error: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "verifier": self.verifier,
            "vocab_size": self.vocab_size,
            "gamma": self.gamma,
            "length": self.length,
            "seed": self.seed,
            "trials": self.trials,
            "k_drafts": self.k_drafts,
            "mutate": self.mutate,
            "tv": self.tv,
            "tv_bound": self.tv_bound,
            "max_z": self.max_z,
            "z_bound": self.z_bound,
            "z_violations": self.z_violations,
            "worst_sequence": list(self.worst_sequence),
            "worst_error": self.worst_error,
            "pass": self.passed,
        }


def _mutated_single_verify(
    verifier: str,
    trace: DraftTrace,
    p_model: TableArModel,
    q_model: TableArModel,
    rng: np.random.Generator,
    mutate: str,
) -> VerifyOutcome:
    """Run a single-draft verifier with its acceptance chain corrupted.

    Shares every building block with the production verifiers; only the h
    values differ.
    """
    if mutate == "unclamp":
        # unclamping only changes the analytic law (1 - h goes negative);
        # a sampling scan cannot distinguish h > 1 from h = 1
        raise ValueError("the unclamp mutation is only observable under enumeration")
    chain = ratio_chain(trace)
    cums = joint_products(trace)
    if verifier == "tokenwise":
        h = _apply_mutation(tokenwise_chain(trace).h, mutate)
        tau, events = forward_scan(h, rng)
    elif verifier == "naive-hsd":
        h = _apply_mutation(naive_hsd_chain(trace).h, mutate)
        tau, events = backward_scan(h, rng)
    else:
        h = _apply_mutation(capped_hsd_chain(trace).h, mutate)
        tau, events = backward_scan(h, rng)
    emitted = list(trace.tokens[:tau])
    if tau == trace.gamma:
        emitted.append(_emit_bonus(trace.bonus_dist, trace.gamma + 1, rng, events))
    elif verifier == "tokenwise":
        residual = tokenwise_residual(trace.p_dists[tau], trace.q_dists[tau])
        tok, u = _draw(residual, rng)
        events.append(Event(tau + 1, "resample", residual[tok], u))
        emitted.append(tok)
    elif verifier == "naive-hsd":
        context = trace.prefix + trace.tokens[:tau]
        for t in range(tau, trace.gamma):
            residual = naive_branch_residual(p_model, q_model, context)
            tok, u = _draw(residual, rng)
            events.append(Event(t + 1, "resample", residual[tok], u))
            emitted.append(tok)
            context = context + (tok,)
    else:
        residual = capped_branch_residual(trace, chain, tau, cums)
        tok, u = _draw(residual, rng)
        events.append(Event(tau + 1, "resample", residual[tok], u))
        emitted.append(tok)
    return VerifyOutcome(tau, tuple(emitted), tuple(events))


def _simulate_sequence(
    verifier: str,
    p_model: TableArModel,
    q_model: TableArModel,
    gamma: int,
    length: int,
    k_drafts: int,
    rng: np.random.Generator,
    mutate: str | None,
) -> Sequence:
    """One end-to-end generation: draft, verify, continue from the target."""
    if verifier in SINGLE_DRAFT_VERIFIERS:
        trace = sample_draft(q_model, p_model, (), gamma, rng)
        if mutate is not None:
            outcome = _mutated_single_verify(verifier, trace, p_model, q_model, rng, mutate)
        elif verifier == "tokenwise":
            outcome = tokenwise_verify(trace, rng)
        elif verifier == "naive-hsd":
            outcome = naive_hsd_verify(trace, p_model, q_model, rng)
        else:
            outcome = capped_hsd_verify(trace, rng)
    else:
        if mutate is not None:
            raise ValueError("mutations are not supported for multi-draft verifiers")
        traces = [sample_draft(q_model, p_model, (), gamma, rng) for _ in range(k_drafts)]
        if verifier == "multidraft-hsd":
            outcome = multidraft_hsd_verify(traces, rng)
        else:
            outcome = multidraft_tokenwise_verify(traces, rng)
    seq = outcome.emitted[:length]
    while len(seq) < length:
        seq = seq + (sample_index(p_model.conditional(seq), rng),)
    return seq


def _mc_chunk(payload: dict) -> Counter:
    p_model = TableArModel(payload["vocab_size"], payload["depth"], table=payload["p_table"])
    q_model = TableArModel(payload["vocab_size"], payload["depth"], table=payload["q_table"])
    counts: Counter = Counter()
    for trial in range(payload["start"], payload["stop"]):
        rng = substream(payload["seed"], trial)
        counts[
            _simulate_sequence(
                payload["verifier"],
                p_model,
                q_model,
                payload["gamma"],
                payload["length"],
                payload["k_drafts"],
                rng,
                payload["mutate"],
            )
        ] += 1
    return counts


def monte_carlo_fit(
    verifier: str,
    p_model: TableArModel,
    q_model: TableArModel,
    gamma: int,
    length: int,
    trials: int,
    master_seed: int,
    k_drafts: int = 1,
    mutate: str | None = None,
    workers: int = 1,
) -> FitReport:
    """Simulate end-to-end generations and test them against the target joint.

    Every trial owns the random substream derived from (master_seed, trial
    index), so results are identical for any worker count.  The run passes
    when every per-sequence count sits within 4-sigma binomial bounds and the
    empirical total variation stays under ``3 * sqrt(V**L / trials)``.
    """
    if trials < 10_000:
        raise ValueError(f"trials must be >= 10^4, got {trials}")
    if verifier not in SINGLE_DRAFT_VERIFIERS + MULTI_DRAFT_VERIFIERS:
        raise ValueError(f"unknown verifier {verifier!r}")
    if verifier in SINGLE_DRAFT_VERIFIERS and k_drafts != 1:
        raise ValueError(f"{verifier} takes exactly one draft")
    if k_drafts < 1:
        raise ValueError(f"k_drafts must be >= 1, got {k_drafts}")
    if length < gamma:
        raise ValueError(f"length {length} shorter than draft length {gamma}")
    depth = min(p_model.max_depth, q_model.max_depth)
    if depth < max(length, gamma + 1):
        raise ValueError(f"models of depth {depth} cannot run gamma={gamma} with continuations to {length}")

    if workers > 1:
        payloads = []
        bounds = [round(i * trials / workers) for i in range(workers + 1)]
        p_table = {prefix: p_model.conditional(prefix) for prefix in p_model.prefixes()}
        q_table = {prefix: q_model.conditional(prefix) for prefix in q_model.prefixes()}
        for start, stop in zip(bounds[:-1], bounds[1:]):
            payloads.append(
                {
                    "vocab_size": p_model.vocab_size,
                    "depth": p_model.max_depth,
                    "p_table": p_table,
                    "q_table": q_table,
                    "verifier": verifier,
                    "gamma": gamma,
                    "length": length,
                    "k_drafts": k_drafts,
                    "mutate": mutate,
                    "seed": master_seed,
                    "start": start,
                    "stop": stop,
                }
            )
        counts: Counter = Counter()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_mc_chunk, payloads):
                counts.update(chunk)
    else:
        counts = Counter()
        for trial in range(trials):
            rng = substream(master_seed, trial)
            counts[_simulate_sequence(verifier, p_model, q_model, gamma, length, k_drafts, rng, mutate)] += 1

    expected = target_joint_distribution(p_model, length)
    z_bound = 4.0
    max_z, z_violations = 0.0, 0
    worst_seq, worst_err = (), 0.0
    l1_terms = []
    for seq, p_s in expected.probs.items():
        count = counts.get(seq, 0)
        emp = count / trials
        err = abs(emp - p_s)
        l1_terms.append(err)
        if err > worst_err:
            worst_seq, worst_err = seq, err
        sigma = math.sqrt(trials * p_s * (1.0 - p_s))
        if sigma > 0.0:
            z = abs(count - trials * p_s) / sigma
            max_z = max(max_z, z)
            if z > z_bound:
                z_violations += 1
        elif count > 0:  # impossible sequence observed
            z_violations += 1
            max_z = math.inf
    stray = set(counts) - set(expected.probs)
    if stray:
        raise ValueError(f"simulated sequences outside the expected support: {sorted(stray)[:3]}")
    tv = 0.5 * math.fsum(l1_terms)
    tv_bound = 3.0 * math.sqrt(p_model.vocab_size**length / trials)
    passed = z_violations == 0 and tv < tv_bound
    return FitReport(
        verifier=verifier,
        vocab_size=p_model.vocab_size,
        gamma=gamma,
        length=length,
        seed=master_seed,
        trials=trials,
        k_drafts=k_drafts,
        mutate=mutate,
        tv=tv,
        tv_bound=tv_bound,
        max_z=max_z,
        z_bound=z_bound,
        z_violations=z_violations,
        worst_sequence=worst_seq,
        worst_error=worst_err,
        passed=passed,
    )
