"""Maneuver posterior over {LLC, LK, RLC} from calibrated triple scores.

For hypothesis h and the 12 observed categories e_i, the unnormalized score
is P(h) * prod_i P(e_i | h) / P(e_i) with

    P(h)      = score(<vehicle, INTENTION_IS, h>)
    P(e_i|h)  = score(<category_i, INTENTION_IS, h>)
    P(e_i)    = score(<vehicle, SLOT_PREDICATE_i, category_i>)

computed in log space. The evidence terms are hypothesis-independent, so the
argmax never depends on them; normalization across the three hypotheses turns
the scores into a proper posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .features import FeatureVector, SLOT_NAMES
from .kg import INTENTION_IS, INTENTIONS, SLOT_PREDICATES, Triple, VEHICLE_CLASS


@dataclass(frozen=True)
class ManeuverPosterior:
    """Normalized probabilities per hypothesis plus the argmax intention."""

    probabilities: Mapping[str, float]
    intention: str
    raw_scores: Mapping[str, float]

    def __iter__(self):
        return iter((self.intention, self.probabilities))


def _argmax_intention(values: Mapping[str, float]) -> str:
    # Fixed tie-break order: LLC, then LK, then RLC.
    best = INTENTIONS[0]
    for h in INTENTIONS[1:]:
        if values[h] > values[best]:
            best = h
    return best


def combine_scores(
    prior: Mapping[str, float],
    conditionals: Mapping[str, Sequence[float]],
    evidence: Sequence[float],
) -> ManeuverPosterior:
    """Fuse per-event scores into a posterior (log-space, order-independent sums).

    prior maps each hypothesis to P(h); conditionals maps each hypothesis to
    the per-event P(e_i|h) sequence; evidence holds the per-event P(e_i).
    """
    log_unnorm = {}
    for h in INTENTIONS:
        conds = conditionals[h]
        if len(conds) != len(evidence):
            raise ValueError("conditionals and evidence lengths differ")
        acc = math.log(prior[h])
        for c, e in zip(conds, evidence):
            acc += math.log(c) - math.log(e)
        log_unnorm[h] = acc
    return _posterior_from_logs(log_unnorm)


def _posterior_from_logs(log_unnorm: Mapping[str, float]) -> ManeuverPosterior:
    m = max(log_unnorm[h] for h in INTENTIONS)
    total = 0.0
    for h in INTENTIONS:
        total += math.exp(log_unnorm[h] - m)
    log_norm = m + math.log(total)
    probabilities = {h: math.exp(log_unnorm[h] - log_norm) for h in INTENTIONS}
    raw_scores = {h: math.exp(log_unnorm[h]) for h in INTENTIONS}
    return ManeuverPosterior(
        probabilities=probabilities,
        intention=_argmax_intention(probabilities),
        raw_scores=raw_scores,
    )


def hypothesis_triple(intention: str) -> Triple:
    return Triple(VEHICLE_CLASS, INTENTION_IS, intention)


def conditional_triple(category: str, intention: str) -> Triple:
    return Triple(category, INTENTION_IS, intention)


def event_triple(slot_name: str, category: str) -> Triple:
    return Triple(VEHICLE_CLASS, SLOT_PREDICATES[slot_name], category)


def posterior(model, features: FeatureVector) -> ManeuverPosterior:
    """Posterior over the three maneuver hypotheses for one feature vector.

    model is anything exposing score_triple(Triple) -> float in (0, 1);
    unknown category labels surface as the model's unknown-entity error.
    """
    log_unnorm = {}
    for h in INTENTIONS:
        acc = math.log(model.score_triple(hypothesis_triple(h)))
        for slot_name, category in zip(SLOT_NAMES, features.labels):
            acc += (
                math.log(model.score_triple(conditional_triple(category, h)))
                - math.log(model.score_triple(event_triple(slot_name, category)))
            )
        log_unnorm[h] = acc
    return _posterior_from_logs(log_unnorm)


def predict(model, features: FeatureVector) -> str:
    """Argmax intention for one feature vector."""
    return posterior(model, features).intention
