"""Triple data model, CSV knowledge-graph I/O, and the synthetic training corpus.

Labeled driving situations become per-instance subgraphs: a class-membership
edge, one edge per feature slot, and an intention edge. The corpus generator
samples situations and labels them with a deterministic rule so the learned
model can later be checked against an independent oracle.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .features import (
    DEFAULT_PRESET,
    FeatureVector,
    SLOTS,
    SLOT_NAMES,
)


class TripleParseError(ValueError):
    """A triples or corpus CSV row could not be parsed; carries the line number."""


INTENTIONS = ("LLC", "LK", "RLC")

VEHICLE_CLASS = "vehicle"
HAS_CHILD = "HAS_CHILD"
INTENTION_IS = "INTENTION_IS"


def slot_predicate(slot_name: str) -> str:
    """Relation name for a feature slot, e.g. preceding_vehicle_ttc -> PRECEDING_VEHICLE_TTC_IS."""
    return slot_name.upper() + "_IS"


SLOT_PREDICATES = {name: slot_predicate(name) for name in SLOT_NAMES}


def _check_token(value: str, what: str) -> str:
    if not value or not value.isascii() or "," in value or "\n" in value or "\r" in value:
        raise ValueError(f"{what} must be a non-empty ASCII token without commas/newlines: {value!r}")
    return value


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    predicate: str
    object: str

    def __post_init__(self) -> None:
        _check_token(self.subject, "subject")
        _check_token(self.predicate, "predicate")
        _check_token(self.object, "object")


class KnowledgeGraph:
    """Deduplicated, deterministically ordered set of triples."""

    __slots__ = ("triples", "entities", "relations")

    def __init__(self, triples: Iterable[Triple]):
        ordered = tuple(sorted(set(triples)))
        entities = set()
        relations = set()
        for t in ordered:
            entities.add(t.subject)
            entities.add(t.object)
            relations.add(t.predicate)
        object.__setattr__(self, "triples", ordered)
        object.__setattr__(self, "entities", frozenset(entities))
        object.__setattr__(self, "relations", frozenset(relations))

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("KnowledgeGraph is immutable")

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple: Triple) -> bool:
        return triple in set(self.triples)

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeGraph) and self.triples == other.triples

    def __hash__(self) -> int:
        return hash(self.triples)

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph({len(self.triples)} triples, "
            f"{len(self.entities)} entities, {len(self.relations)} relations)"
        )


def load_triples_csv(path) -> KnowledgeGraph:
    """Read a header-less subject,predicate,object CSV into a graph."""
    triples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise TripleParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                triples.append(Triple(*[f.strip() for f in row]))
            except ValueError as exc:
                raise TripleParseError(f"{path}:{lineno}: {exc}") from exc
    if not triples:
        raise TripleParseError(f"{path}: no triples found")
    return KnowledgeGraph(triples)


def save_triples_csv(graph: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in graph.triples:
            fh.write(f"{t.subject},{t.predicate},{t.object}\n")


@dataclass(frozen=True)
class InstanceRecord:
    """One labeled example: an instance node, its features, and its intention."""

    instance_id: str
    features: FeatureVector
    intention: str

    def __post_init__(self) -> None:
        _check_token(self.instance_id, "instance_id")
        if self.intention not in INTENTIONS:
            raise ValueError(f"intention must be one of {INTENTIONS}, got {self.intention!r}")


def instances_to_triples(records: Sequence[InstanceRecord]) -> KnowledgeGraph:
    """Expand labeled records into the training graph.

    Per record: <vehicle, HAS_CHILD, id>, one feature triple per slot, and
    <id, INTENTION_IS, intention> (14 triples before deduplication).
    """
    seen_ids = set()
    triples = []
    for rec in records:
        if rec.instance_id in seen_ids:
            raise ValueError(f"duplicate instance_id {rec.instance_id!r}")
        seen_ids.add(rec.instance_id)
        triples.append(Triple(VEHICLE_CLASS, HAS_CHILD, rec.instance_id))
        for slot_name, label in zip(SLOT_NAMES, rec.features.labels):
            triples.append(Triple(rec.instance_id, SLOT_PREDICATES[slot_name], label))
        triples.append(Triple(rec.instance_id, INTENTION_IS, rec.intention))
    return KnowledgeGraph(triples)


# --- labeling rule -----------------------------------------------------------

def _left_lane_open(v: FeatureVector) -> bool:
    return (
        v["left_preceding_vehicle_ttc"] == "lowRiskLeftPreceding"
        and v["left_following_vehicle_ttc"] == "lowRiskLeftFollowing"
        and v["highest_attraction_lane"] == "leftLaneHighestAttraction"
        and v["highest_frontal_gap_lane"] == "leftLaneHighestGap"
    )


def _right_lane_open(v: FeatureVector) -> bool:
    return (
        v["right_preceding_vehicle_ttc"] == "lowRiskRightPreceding"
        and v["right_following_vehicle_ttc"] == "lowRiskRightFollowing"
        and v["highest_attraction_lane"] == "rightLaneHighestAttraction"
        and v["highest_frontal_gap_lane"] == "rightLaneHighestGap"
    )


def rule_intention(vector: FeatureVector) -> str:
    """Ground-truth labeling rule, total on feature vectors.

    A high-risk TTC (or collision-risk THW) with the preceding vehicle forces
    a change toward a free, attractive adjacent lane; the left side wins when
    both are open; otherwise the vehicle keeps its lane.
    """
    danger_ahead = (
        vector["preceding_vehicle_ttc"] == "highRiskPreceding"
        or vector["preceding_vehicle_thw"] == "collisionRiskHeadway"
    )
    if danger_ahead and _left_lane_open(vector):
        return "LLC"
    if danger_ahead and _right_lane_open(vector):
        return "RLC"
    return "LK"


# --- synthetic corpus --------------------------------------------------------

# Episode mixture used by the default corpus profile. Pressure episodes model
# drivers closing on a slow leader with an open escape lane; calm episodes
# model free-flow keeping. All labels still come from rule_intention.
_EPISODE_WEIGHTS = (("left_pressure", 0.27), ("right_pressure", 0.27), ("calm", 0.46))
_PRESSURE_TTC_WEIGHTS = {"high": 0.75, "medium": 0.20, "low": 0.05}
_PRESSURE_THW_WEIGHTS = {"collision": 0.55, "risky": 0.25, "safe": 0.20}
_CALM_TTC_WEIGHTS = {"high": 0.04, "medium": 0.28, "low": 0.68}
_CALM_THW_WEIGHTS = {"collision": 0.04, "risky": 0.28, "safe": 0.68}
_PRESSURE_OPEN_SIDE_PROB = 0.80
_CALM_SIDE_WEIGHTS = (("left_open", 0.40), ("right_open", 0.40), ("uniform", 0.20))

_TTC_LEVEL_LABEL = {
    "high": "highRiskPreceding",
    "medium": "mediumRiskPreceding",
    "low": "lowRiskPreceding",
}
_THW_LEVEL_LABEL = {
    "collision": "collisionRiskHeadway",
    "risky": "riskyHeadway",
    "safe": "safeHeadway",
}

_LEFT_OPEN_LABELS = {
    "left_preceding_vehicle_ttc": "lowRiskLeftPreceding",
    "left_following_vehicle_ttc": "lowRiskLeftFollowing",
    "highest_attraction_lane": "leftLaneHighestAttraction",
    "highest_frontal_gap_lane": "leftLaneHighestGap",
}
_RIGHT_OPEN_LABELS = {
    "right_preceding_vehicle_ttc": "lowRiskRightPreceding",
    "right_following_vehicle_ttc": "lowRiskRightFollowing",
    "highest_attraction_lane": "rightLaneHighestAttraction",
    "highest_frontal_gap_lane": "rightLaneHighestGap",
}


def _weighted_choice(rng: random.Random, weighted: Iterable[tuple[str, float]]) -> str:
    items = list(weighted)
    return rng.choices([k for k, _ in items], weights=[w for _, w in items], k=1)[0]


def _sample_uniform_slots(rng: random.Random) -> dict[str, str]:
    return {slot.name: rng.choice(slot.vocabulary) for slot in SLOTS}


def _sample_episode_slots(rng: random.Random) -> dict[str, str]:
    slots = _sample_uniform_slots(rng)
    episode = _weighted_choice(rng, _EPISODE_WEIGHTS)
    if episode in ("left_pressure", "right_pressure"):
        ttc = _weighted_choice(rng, _PRESSURE_TTC_WEIGHTS.items())
        thw = _weighted_choice(rng, _PRESSURE_THW_WEIGHTS.items())
        open_labels = _LEFT_OPEN_LABELS if episode == "left_pressure" else _RIGHT_OPEN_LABELS
        if rng.random() < _PRESSURE_OPEN_SIDE_PROB:
            slots.update(open_labels)
    else:
        ttc = _weighted_choice(rng, _CALM_TTC_WEIGHTS.items())
        thw = _weighted_choice(rng, _CALM_THW_WEIGHTS.items())
        side = _weighted_choice(rng, _CALM_SIDE_WEIGHTS)
        if side == "left_open":
            slots.update(_LEFT_OPEN_LABELS)
        elif side == "right_open":
            slots.update(_RIGHT_OPEN_LABELS)
    slots["preceding_vehicle_ttc"] = _TTC_LEVEL_LABEL[ttc]
    slots["preceding_vehicle_thw"] = _THW_LEVEL_LABEL[thw]
    return slots


def generate_synthetic_corpus(
    n: int, seed: int, profile: str = "episodic"
) -> list[InstanceRecord]:
    """Deterministically sample n labeled instances.

    profile "episodic" (default) draws situations from a mixture of
    lane-change-pressure and free-flow episodes, which yields a realistic
    class balance; "uniform" samples every slot independently. Labels always
    come from rule_intention.
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if profile not in ("episodic", "uniform"):
        raise ValueError(f"unknown profile {profile!r}")
    rng = random.Random(seed)
    sampler = _sample_episode_slots if profile == "episodic" else _sample_uniform_slots
    records = []
    for i in range(n):
        features = FeatureVector.from_mapping(sampler(rng))
        records.append(
            InstanceRecord(f"vehicle{i + 1}", features, rule_intention(features))
        )
    return records


# --- corpus CSV --------------------------------------------------------------

_CORPUS_HEADER = ("instance_id", *SLOT_NAMES, "intention")


def save_corpus_csv(records: Sequence[InstanceRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CORPUS_HEADER)
        for rec in records:
            writer.writerow((rec.instance_id, *rec.features.labels, rec.intention))


def load_corpus_csv(path) -> list[InstanceRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TripleParseError(f"{path}: empty corpus file") from None
        if tuple(header) != _CORPUS_HEADER:
            raise TripleParseError(f"{path}:1: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(_CORPUS_HEADER):
                raise TripleParseError(
                    f"{path}:{lineno}: expected {len(_CORPUS_HEADER)} fields, got {len(row)}"
                )
            try:
                records.append(InstanceRecord(row[0], FeatureVector(row[1:-1]), row[-1]))
            except ValueError as exc:
                raise TripleParseError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise TripleParseError(f"{path}: no records found")
    return records


def split_for_eval(
    records: Sequence[InstanceRecord], holdout_fraction: float, seed: int
) -> tuple[KnowledgeGraph, tuple[Triple, ...]]:
    """Hold out the intention edges of a fraction of instances for ranking eval.

    The held-out instances keep their class-membership and feature edges in
    the returned graph, so predicting their intention object is a genuine
    link-prediction task.
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError(f"holdout_fraction must be in [0, 1), got {holdout_fraction}")
    graph = instances_to_triples(records)
    n_holdout = int(len(records) * holdout_fraction)
    if n_holdout == 0:
        return graph, ()
    rng = random.Random(seed)
    held_ids = {r.instance_id for r in rng.sample(list(records), n_holdout)}
    held_out = tuple(
        t for t in graph.triples if t.predicate == INTENTION_IS and t.subject in held_ids
    )
    kept = [t for t in graph.triples if t not in set(held_out)]
    return KnowledgeGraph(kept), held_out


def scenario_vector(ttc_label: str, thw_label: str) -> FeatureVector:
    """Scenario-scope vector: default preset plus the two dynamic labels."""
    m = dict(DEFAULT_PRESET)
    m["preceding_vehicle_ttc"] = ttc_label
    m["preceding_vehicle_thw"] = thw_label
    return FeatureVector.from_mapping(m)
