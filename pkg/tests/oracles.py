"""Independent brute-force re-implementations used to cross-check metrics.

Deliberately written in a different style from the library (explicit loops
over question ids, no shared helpers) so both sides cannot inherit the same
bug.
"""

from __future__ import annotations

import random


def oracle_global_overthinking(records, target_model, correct_only=True):
    """Returns (score, included_questions, excluded_questions)."""
    question_ids = []
    for rec in records:
        if rec.model_id == target_model and rec.question_id not in question_ids:
            question_ids.append(rec.question_id)
    total = 0.0
    included = 0
    excluded = 0
    for qid in sorted(question_ids):
        target_spends = [
            r.spend for r in records if r.model_id == target_model and r.question_id == qid
        ]
        pool_spends = []
        for r in records:
            if r.question_id != qid:
                continue
            if correct_only and r.correct != 1.0:
                continue
            pool_spends.append(r.spend)
        if not pool_spends:
            excluded += 1
            continue
        mean_spend = sum(target_spends) / len(target_spends)
        total += mean_spend - min(pool_spends)
        included += 1
    if included == 0:
        raise ValueError("oracle: nothing to include")
    return total / included, included, excluded


def oracle_local_envelope(records, model_id):
    question_ids = []
    for rec in records:
        if rec.model_id == model_id and rec.question_id not in question_ids:
            question_ids.append(rec.question_id)
    total = 0.0
    for qid in question_ids:
        spends = [r.spend for r in records if r.model_id == model_id and r.question_id == qid]
        total += max(spends) - min(spends)
    return total / len(question_ids)


def oracle_pass_at_k_mc(n, c, k, resamples=100_000, seed=0):
    """Monte Carlo estimate: draw k of n samples without replacement."""
    rng = random.Random(seed)
    outcomes = [1] * c + [0] * (n - c)
    hits = 0
    for _ in range(resamples):
        if sum(rng.sample(outcomes, k)) > 0:
            hits += 1
    return hits / resamples


def oracle_min_correct_spend(records, question_id):
    best = None
    for r in records:
        if r.question_id == question_id and r.correct == 1.0:
            if best is None or r.spend < best:
                best = r.spend
    return best


def oracle_budget_for_bin(records, binning_assignment, bin_index, fallback_max):
    minima = []
    for qid in sorted(binning_assignment):
        if binning_assignment[qid] != bin_index:
            continue
        m = oracle_min_correct_spend(records, qid)
        if m is not None:
            minima.append(m)
    if not minima:
        return fallback_max
    return max(1, round(sum(minima) / len(minima)))
