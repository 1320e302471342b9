"""Exhaustive prediction precompute and constant-time lookup.

Every linguistic input combination in a scope is scored once through the
Bayesian predictor and stored against its canonical feature token, so the
serving path is a single hash lookup. The full scope enumerates the whole
3^12 space; the scenario scope pins the ten preset slots and enumerates just
the TTC x THW grid.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from . import bayes
from .bayes import _posterior_from_logs
from .features import DEFAULT_PRESET, FeatureVector, SLOTS, SLOT_NAMES
from .kg import INTENTIONS
from .kge import UnknownEntityError


class TableMissError(KeyError):
    """The queried feature combination is outside the compiled scope."""

    def __init__(self, token: str):
        super().__init__(token)
        self.token = token

    def __str__(self) -> str:
        return f"feature combination not in compiled table: {self.token}"


class TableFormatError(ValueError):
    """A prediction-table CSV violates the format contract."""


class Prediction(NamedTuple):
    intention: str
    p_llc: float
    p_lk: float
    p_rlc: float


SCOPES = ("full", "scenario")


def scope_vocabularies(
    scope: str, preset: Mapping[str, str] = DEFAULT_PRESET
) -> dict[str, tuple[str, ...]]:
    """Per-slot label lists whose Cartesian product is the enumeration space."""
    if scope == "full":
        return {slot.name: slot.vocabulary for slot in SLOTS}
    if scope == "scenario":
        vocab = {}
        for slot in SLOTS:
            if slot.name in ("preceding_vehicle_ttc", "preceding_vehicle_thw"):
                vocab[slot.name] = slot.vocabulary
            else:
                vocab[slot.name] = (preset[slot.name],)
        return vocab
    raise ValueError(f"unknown scope {scope!r}, expected one of {SCOPES}")


@dataclass(frozen=True)
class PredictionTable:
    rows: Mapping[str, Prediction]
    slot_vocabularies: Mapping[str, tuple[str, ...]]
    source_model_id: str
    scope: str

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PredictionTable)
            and self.scope == other.scope
            and self.source_model_id == other.source_model_id
            and dict(self.slot_vocabularies) == dict(other.slot_vocabularies)
            and dict(self.rows) == dict(other.rows)
        )


def lookup(table: PredictionTable, features: FeatureVector) -> Prediction:
    """Exact-match retrieval; a miss is a scope misconfiguration, never a guess."""
    token = features.token()
    try:
        return table.rows[token]
    except KeyError:
        raise TableMissError(token) from None


def compile_table(model, scope: str = "scenario") -> PredictionTable:
    """Precompute the posterior for every combination in the scope.

    The enumeration is vectorized but reproduces the live predictor's float
    operations term by term, so stored rows are bit-identical to calling
    bayes.posterior on the same vector.
    """
    vocab = scope_vocabularies(scope)
    missing = set()
    atoms = {}

    def score(triple):
        try:
            return model.score_triple(triple)
        except (UnknownEntityError, KeyError) as exc:
            missing.add(str(exc))
            return None

    log_prior = {}
    for h in INTENTIONS:
        p = score(bayes.hypothesis_triple(h))
        log_prior[h] = math.log(p) if p is not None else None
    # delta[slot][label][h] = log P(label|h) - log P(label), the slot's additive term
    delta: dict[str, dict[str, list[float]]] = {}
    for name in SLOT_NAMES:
        delta[name] = {}
        for label in vocab[name]:
            evid = score(bayes.event_triple(name, label))
            terms = []
            for h in INTENTIONS:
                cond = score(bayes.conditional_triple(label, h))
                if cond is None or evid is None:
                    terms.append(math.nan)
                else:
                    terms.append(math.log(cond) - math.log(evid))
            delta[name][label] = terms
    if missing:
        raise ValueError(
            "model is missing labels required by the scope: " + ", ".join(sorted(missing))
        )

    sizes = [len(vocab[name]) for name in SLOT_NAMES]
    n_rows = int(np.prod(sizes))
    acc = np.empty((n_rows, len(INTENTIONS)), dtype=np.float64)
    for j, h in enumerate(INTENTIONS):
        acc[:, j] = log_prior[h]
    # Row order matches itertools.product over slots in canonical order.
    repeat = n_rows
    for name, size in zip(SLOT_NAMES, sizes):
        repeat //= size
        tile = n_rows // (repeat * size)
        idx = np.tile(np.repeat(np.arange(size), repeat), tile)
        table_vals = np.array([delta[name][label] for label in vocab[name]])
        acc = acc + table_vals[idx]

    label_product = itertools.product(*(vocab[name] for name in SLOT_NAMES))
    rows = {}
    for i, labels in enumerate(label_product):
        post = _posterior_from_logs(
            {h: float(acc[i, j]) for j, h in enumerate(INTENTIONS)}
        )
        rows[",".join(labels)] = Prediction(
            post.intention,
            post.probabilities["LLC"],
            post.probabilities["LK"],
            post.probabilities["RLC"],
        )
    return PredictionTable(
        rows=rows,
        slot_vocabularies=vocab,
        source_model_id=getattr(model, "checksum", "unknown"),
        scope=scope,
    )


# --- CSV ----------------------------------------------------------------------

_EXTRA_COLUMNS = ("intention", "p_llc", "p_lk", "p_rlc")


def _format_prob(p: float) -> str:
    return format(p, ".9g")


def save_table_csv(table: PredictionTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# model={table.source_model_id} scope={table.scope}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SLOT_NAMES + _EXTRA_COLUMNS)
        for token, pred in table.rows.items():
            writer.writerow(
                token.split(",")
                + [pred.intention, _format_prob(pred.p_llc), _format_prob(pred.p_lk), _format_prob(pred.p_rlc)]
            )


def load_table_csv(path) -> PredictionTable:
    """Load and validate a table: labels, duplicates, argmax consistency, completeness."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# model="):
            raise TableFormatError(f"{path}:1: missing '# model=... scope=...' comment line")
        meta = first[2:].strip().split(" ")
        fields = dict(item.split("=", 1) for item in meta if "=" in item)
        model_id = fields.get("model", "unknown")
        scope = fields.get("scope", "unknown")
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableFormatError(f"{path}: missing header row") from None
        if tuple(header) != SLOT_NAMES + _EXTRA_COLUMNS:
            raise TableFormatError(f"{path}:2: unexpected header {header}")
        rows: dict[str, Prediction] = {}
        seen_labels: list[set[str]] = [set() for _ in SLOT_NAMES]
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(header):
                raise TableFormatError(
                    f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                )
            labels = row[: len(SLOT_NAMES)]
            for slot, label, seen in zip(SLOTS, labels, seen_labels):
                if label not in slot.vocabulary:
                    raise TableFormatError(
                        f"{path}:{lineno}: label {label!r} not valid for slot {slot.name!r}"
                    )
                seen.add(label)
            token = ",".join(labels)
            if token in rows:
                raise TableFormatError(f"{path}:{lineno}: duplicate combination {token}")
            intention = row[len(SLOT_NAMES)]
            if intention not in INTENTIONS:
                raise TableFormatError(f"{path}:{lineno}: unknown intention {intention!r}")
            try:
                probs = tuple(float(x) for x in row[len(SLOT_NAMES) + 1 :])
            except ValueError as exc:
                raise TableFormatError(f"{path}:{lineno}: bad probability: {exc}") from exc
            pred = Prediction(intention, *probs)
            stored = {h: p for h, p in zip(INTENTIONS, probs)}
            # 9-significant-digit printing can blur exact ties; allow that much slack.
            if stored[intention] < max(stored.values()) - 1e-8:
                raise TableFormatError(
                    f"{path}:{lineno}: intention {intention} is not the argmax of stored probabilities"
                )
            rows[token] = pred
    if not rows:
        raise TableFormatError(f"{path}: no rows")
    vocab = {
        name: tuple(sorted(seen, key=slot.vocabulary.index))
        for name, slot, seen in zip(SLOT_NAMES, SLOTS, seen_labels)
    }
    expected = 1
    for name in SLOT_NAMES:
        expected *= len(vocab[name])
    if len(rows) != expected:
        raise TableFormatError(
            f"{path}: incomplete table: {len(rows)} rows but the observed vocabularies "
            f"span {expected} combinations ({expected - len(rows)} missing)"
        )
    return PredictionTable(rows=rows, slot_vocabularies=vocab, source_model_id=model_id, scope=scope)
