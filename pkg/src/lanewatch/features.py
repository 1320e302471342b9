"""Linguistic feature vocabulary and TTC/THW discretization.

The prediction input is a 12-slot vector of linguistic categories describing
the target vehicle's situation. Two slots (TTC and THW to the preceding
vehicle) are derived from kinematics at runtime; the other ten are pinned by
a scenario preset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping


class UnknownLabelError(ValueError):
    """A category label does not belong to its slot's vocabulary."""


@dataclass(frozen=True)
class FeatureSlot:
    """One named input slot with its ordered category vocabulary."""

    name: str
    vocabulary: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.vocabulary:
            raise ValueError(f"slot {self.name!r} has an empty vocabulary")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError(f"slot {self.name!r} has duplicate labels")


def _risk_vocab(side: str) -> tuple[str, ...]:
    return (f"highRisk{side}", f"mediumRisk{side}", f"lowRisk{side}")


# Canonical slot order. Serialized vectors, wire messages, and table columns
# all follow this order.
SLOTS: tuple[FeatureSlot, ...] = (
    FeatureSlot("lateral_velocity", ("movingLeft", "movingStraight", "movingRight")),
    FeatureSlot(
        "lateral_acceleration",
        ("leftLateralAcceleration", "zeroLateralAcceleration", "rightLateralAcceleration"),
    ),
    FeatureSlot("left_preceding_vehicle_ttc", _risk_vocab("LeftPreceding")),
    FeatureSlot("preceding_vehicle_ttc", _risk_vocab("Preceding")),
    FeatureSlot("right_preceding_vehicle_ttc", _risk_vocab("RightPreceding")),
    FeatureSlot("left_following_vehicle_ttc", _risk_vocab("LeftFollowing")),
    FeatureSlot("right_following_vehicle_ttc", _risk_vocab("RightFollowing")),
    FeatureSlot("preceding_vehicle_thw", ("collisionRiskHeadway", "riskyHeadway", "safeHeadway")),
    FeatureSlot("lane_position", ("leftOfTheLane", "centerOfTheLane", "rightOfTheLane")),
    FeatureSlot("lane_id", ("leftmostLane", "middleLane", "rightmostLane")),
    FeatureSlot(
        "highest_attraction_lane",
        ("leftLaneHighestAttraction", "currentLaneHighestAttraction", "rightLaneHighestAttraction"),
    ),
    FeatureSlot(
        "highest_frontal_gap_lane",
        ("leftLaneHighestGap", "currentLaneHighestGap", "rightLaneHighestGap"),
    ),
)

SLOT_NAMES: tuple[str, ...] = tuple(s.name for s in SLOTS)
SLOT_BY_NAME: Mapping[str, FeatureSlot] = {s.name: s for s in SLOTS}

# The two slots computed at runtime; everything else comes from a preset.
DYNAMIC_SLOTS = ("preceding_vehicle_ttc", "preceding_vehicle_thw")

# Scenario preset: target vehicle driving straight in the rightmost lane of a
# two-lane road, left lane empty and the best merge option.
DEFAULT_PRESET: Mapping[str, str] = {
    "lateral_velocity": "movingStraight",
    "lateral_acceleration": "zeroLateralAcceleration",
    "left_preceding_vehicle_ttc": "lowRiskLeftPreceding",
    "right_preceding_vehicle_ttc": "lowRiskRightPreceding",
    "left_following_vehicle_ttc": "lowRiskLeftFollowing",
    "right_following_vehicle_ttc": "lowRiskRightFollowing",
    "lane_position": "centerOfTheLane",
    "lane_id": "rightmostLane",
    "highest_attraction_lane": "leftLaneHighestAttraction",
    "highest_frontal_gap_lane": "leftLaneHighestGap",
}


class FeatureVector:
    """Immutable assignment of one category label to each of the 12 slots."""

    __slots__ = ("_labels",)

    def __init__(self, labels: Iterable[str]):
        labels = tuple(labels)
        if len(labels) != len(SLOTS):
            raise ValueError(f"expected {len(SLOTS)} labels, got {len(labels)}")
        for slot, label in zip(SLOTS, labels):
            if label not in slot.vocabulary:
                raise UnknownLabelError(f"label {label!r} not in vocabulary of slot {slot.name!r}")
        object.__setattr__(self, "_labels", labels)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "FeatureVector":
        missing = [n for n in SLOT_NAMES if n not in mapping]
        if missing:
            raise ValueError(f"missing slots: {missing}")
        extra = [n for n in mapping if n not in SLOT_BY_NAME]
        if extra:
            raise ValueError(f"unknown slots: {extra}")
        return cls(mapping[n] for n in SLOT_NAMES)

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def __getitem__(self, slot_name: str) -> str:
        return self._labels[SLOT_NAMES.index(slot_name)]

    def as_mapping(self) -> dict[str, str]:
        return dict(zip(SLOT_NAMES, self._labels))

    def token(self) -> str:
        """Canonical comma-separated wire form (12 labels, no whitespace)."""
        return ",".join(self._labels)

    def replace(self, **slot_labels: str) -> "FeatureVector":
        m = self.as_mapping()
        m.update(slot_labels)
        return FeatureVector.from_mapping(m)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("FeatureVector is immutable")

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureVector) and self._labels == other._labels

    def __hash__(self) -> int:
        return hash(self._labels)

    def __repr__(self) -> str:
        return f"FeatureVector({self.token()!r})"


def parse_feature_token(token: str) -> FeatureVector:
    """Inverse of :meth:`FeatureVector.token`."""
    parts = token.split(",")
    if len(parts) != len(SLOTS):
        raise ValueError(f"expected {len(SLOTS)} comma-separated labels, got {len(parts)}")
    return FeatureVector(parts)


@dataclass(frozen=True)
class KinematicSnapshot:
    """Raw longitudinal quantities from which TTC and THW are derived.

    gap_to_preceding is the bumper-to-bumper distance to the preceding
    vehicle in meters (infinite when the lane ahead is empty).
    """

    gap_to_preceding: float
    tv_speed: float
    pv_speed: float
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if math.isnan(self.gap_to_preceding) or self.gap_to_preceding < 0:
            raise ValueError(f"gap_to_preceding must be >= 0, got {self.gap_to_preceding}")
        if math.isnan(self.tv_speed) or self.tv_speed < 0:
            raise ValueError(f"tv_speed must be >= 0, got {self.tv_speed}")
        if math.isnan(self.pv_speed) or self.pv_speed < 0:
            raise ValueError(f"pv_speed must be >= 0, got {self.pv_speed}")


def compute_ttc(snapshot: KinematicSnapshot) -> float:
    """Time to collision with the preceding vehicle, gap / closing speed.

    Positive while closing, negative while opening, +inf when the closing
    speed is exactly zero (no collision course).
    """
    closing = snapshot.tv_speed - snapshot.pv_speed
    if closing == 0.0:
        return math.inf
    return snapshot.gap_to_preceding / closing


def compute_thw(snapshot: KinematicSnapshot) -> float:
    """Time headway to the preceding vehicle, gap / own speed (+inf at rest)."""
    if snapshot.tv_speed == 0.0:
        return math.inf
    return snapshot.gap_to_preceding / snapshot.tv_speed


# Discretization thresholds, seconds. Boundaries are half-open with the
# boundary value assigned to the milder category.
TTC_HIGH_RISK_MAX = 4.0
TTC_MEDIUM_RISK_MAX = 10.0
THW_COLLISION_MAX = 1.0
THW_RISKY_MAX = 2.0

_TTC_SLOT_SUFFIX = {
    "left_preceding_vehicle_ttc": "LeftPreceding",
    "preceding_vehicle_ttc": "Preceding",
    "right_preceding_vehicle_ttc": "RightPreceding",
    "left_following_vehicle_ttc": "LeftFollowing",
    "right_following_vehicle_ttc": "RightFollowing",
}


def ttc_to_category(ttc: float, slot: str = "preceding_vehicle_ttc") -> str:
    """Map a TTC value to the risk label of the given TTC slot.

    [0, 4) s is high-risk, [4, 10) s medium-risk; anything else (>= 10 s,
    infinite, or negative, meaning the gap is opening) is low-risk.
    """
    if math.isnan(ttc):
        raise ValueError("TTC is NaN")
    suffix = _TTC_SLOT_SUFFIX[slot]
    if 0.0 <= ttc < TTC_HIGH_RISK_MAX:
        return f"highRisk{suffix}"
    if TTC_HIGH_RISK_MAX <= ttc < TTC_MEDIUM_RISK_MAX:
        return f"mediumRisk{suffix}"
    return f"lowRisk{suffix}"


def thw_to_category(thw: float) -> str:
    """Map a THW value to a headway label: [0,1) collision-risk, [1,2) risky, >=2 safe."""
    if math.isnan(thw):
        raise ValueError("THW is NaN")
    if thw < 0:
        raise ValueError(f"THW must be non-negative, got {thw}")
    if thw < THW_COLLISION_MAX:
        return "collisionRiskHeadway"
    if thw < THW_RISKY_MAX:
        return "riskyHeadway"
    return "safeHeadway"


def assemble_features(
    ttc_category: str,
    thw_category: str,
    preset: Mapping[str, str] = DEFAULT_PRESET,
) -> FeatureVector:
    """Combine the two runtime categories with a 10-slot preset into a full vector."""
    mapping = dict(preset)
    mapping["preceding_vehicle_ttc"] = ttc_category
    mapping["preceding_vehicle_thw"] = thw_category
    return FeatureVector.from_mapping(mapping)


def features_from_snapshot(
    snapshot: KinematicSnapshot, preset: Mapping[str, str] = DEFAULT_PRESET
) -> FeatureVector:
    """Full perception step: derive TTC/THW, discretize, assemble."""
    return assemble_features(
        ttc_to_category(compute_ttc(snapshot)),
        thw_to_category(compute_thw(snapshot)),
        preset,
    )


# Left/right mirror of every sided label; symmetric slots map to themselves.
_MIRROR = {
    "movingLeft": "movingRight",
    "movingRight": "movingLeft",
    "leftLateralAcceleration": "rightLateralAcceleration",
    "rightLateralAcceleration": "leftLateralAcceleration",
    "leftOfTheLane": "rightOfTheLane",
    "rightOfTheLane": "leftOfTheLane",
    "leftmostLane": "rightmostLane",
    "rightmostLane": "leftmostLane",
    "leftLaneHighestAttraction": "rightLaneHighestAttraction",
    "rightLaneHighestAttraction": "leftLaneHighestAttraction",
    "leftLaneHighestGap": "rightLaneHighestGap",
    "rightLaneHighestGap": "leftLaneHighestGap",
}
for _side in ("Preceding", "Following"):
    for _level in ("highRisk", "mediumRisk", "lowRisk"):
        _MIRROR[f"{_level}Left{_side}"] = f"{_level}Right{_side}"
        _MIRROR[f"{_level}Right{_side}"] = f"{_level}Left{_side}"

_MIRROR_SLOT = {
    "left_preceding_vehicle_ttc": "right_preceding_vehicle_ttc",
    "right_preceding_vehicle_ttc": "left_preceding_vehicle_ttc",
    "left_following_vehicle_ttc": "right_following_vehicle_ttc",
    "right_following_vehicle_ttc": "left_following_vehicle_ttc",
}


def mirror_vector(vector: FeatureVector) -> FeatureVector:
    """Swap the left/right sides of a vector (used for the RLC symmetry checks)."""
    m = vector.as_mapping()
    out = {}
    for name, label in m.items():
        target = _MIRROR_SLOT.get(name, name)
        out[target] = _MIRROR.get(label, label)
    return FeatureVector.from_mapping(out)
