"""Translation-based knowledge-graph embedding training and calibrated scoring.

Entities and relations are embedded so that plausible triples (s, p, o) have
v_s + v_p close to v_o. The raw score f(s,p,o) = -||v_s + v_p - v_o|| is
mapped to a probability through a Platt-style sigmoid fitted against sampled
corruptions, so downstream inference can treat triple scores as probabilities.

Training is plain minibatch SGD on a margin ranking loss with
corruption-based negative sampling. Everything is seeded and single-threaded:
same graph + same config => bit-identical model.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kg import KnowledgeGraph, Triple

logger = logging.getLogger(__name__)

_BATCH_SIZE = 128
_PROB_EPS = 1e-12


class UnknownEntityError(ValueError):
    """A triple references an entity or relation the model was not trained on."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training; carries the epoch."""


@dataclass(frozen=True)
class TrainConfig:
    dimension: int = 32
    epochs: int = 200
    learning_rate: float = 0.05
    negatives_per_positive: int = 5
    margin: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.negatives_per_positive <= 0:
            raise ValueError("negatives_per_positive must be positive")
        if self.margin <= 0:
            raise ValueError("margin must be positive")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class EmbeddingModel:
    """Trained entity/relation vectors plus sigmoid calibration (scale, offset)."""

    def __init__(
        self,
        entity_vectors: Mapping[str, np.ndarray],
        relation_vectors: Mapping[str, np.ndarray],
        calibration: tuple[float, float],
        dimension: int,
        rng_seed: int,
    ):
        self.entity_vectors = dict(entity_vectors)
        self.relation_vectors = dict(relation_vectors)
        self.calibration = (float(calibration[0]), float(calibration[1]))
        self.dimension = int(dimension)
        self.rng_seed = int(rng_seed)
        for name, vec in list(self.entity_vectors.items()) + list(self.relation_vectors.items()):
            if vec.shape != (self.dimension,):
                raise ValueError(f"vector for {name!r} has shape {vec.shape}, expected ({self.dimension},)")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"vector for {name!r} has non-finite components")

    def _lookup(self, triple: Triple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        try:
            s = self.entity_vectors[triple.subject]
        except KeyError:
            raise UnknownEntityError(f"unknown entity {triple.subject!r}") from None
        try:
            p = self.relation_vectors[triple.predicate]
        except KeyError:
            raise UnknownEntityError(f"unknown relation {triple.predicate!r}") from None
        try:
            o = self.entity_vectors[triple.object]
        except KeyError:
            raise UnknownEntityError(f"unknown entity {triple.object!r}") from None
        return s, p, o

    def raw_score(self, triple: Triple) -> float:
        """Translation score -||v_s + v_p - v_o||; higher is more plausible."""
        s, p, o = self._lookup(triple)
        return -float(np.linalg.norm(s + p - o))

    def score_triple(self, triple: Triple) -> float:
        """Calibrated plausibility, strictly inside (0, 1)."""
        a, b = self.calibration
        p = _sigmoid(a * self.raw_score(triple) + b)
        return min(max(p, _PROB_EPS), 1.0 - _PROB_EPS)

    # --- serialization -------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            "lanewatch-kge 1",
            f"dimension {self.dimension}",
            f"seed {self.rng_seed}",
            f"calibration {self.calibration[0]!r} {self.calibration[1]!r}",
            f"entities {len(self.entity_vectors)}",
        ]
        for name in sorted(self.entity_vectors):
            vec = " ".join(repr(float(x)) for x in self.entity_vectors[name])
            lines.append(f"{name}\t{vec}")
        lines.append(f"relations {len(self.relation_vectors)}")
        for name in sorted(self.relation_vectors):
            vec = " ".join(repr(float(x)) for x in self.relation_vectors[name])
            lines.append(f"{name}\t{vec}")
        return "\n".join(lines) + "\n"

    @property
    def checksum(self) -> str:
        return hashlib.sha256(self.to_text().encode("ascii")).hexdigest()

    def __eq__(self, other) -> bool:
        return isinstance(other, EmbeddingModel) and self.to_text() == other.to_text()


def save_model(model: EmbeddingModel, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(model.to_text())


def _parse_vector_line(line: str, dimension: int, lineno: int) -> tuple[str, np.ndarray]:
    name, _, rest = line.partition("\t")
    parts = rest.split(" ")
    if not name or len(parts) != dimension:
        raise ValueError(f"model line {lineno}: malformed vector row")
    return name, np.array([float(x) for x in parts], dtype=np.float64)


def load_model(path) -> EmbeddingModel:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "lanewatch-kge 1":
        raise ValueError(f"{path}: not a lanewatch-kge v1 model file")
    dimension = int(lines[1].split(" ")[1])
    seed = int(lines[2].split(" ")[1])
    _, a_text, b_text = lines[3].split(" ")
    n_entities = int(lines[4].split(" ")[1])
    entities = {}
    row = 5
    for i in range(n_entities):
        name, vec = _parse_vector_line(lines[row + i], dimension, row + i + 1)
        entities[name] = vec
    row += n_entities
    n_relations = int(lines[row].split(" ")[1])
    relations = {}
    for i in range(n_relations):
        name, vec = _parse_vector_line(lines[row + 1 + i], dimension, row + i + 2)
        relations[name] = vec
    return EmbeddingModel(entities, relations, (float(a_text), float(b_text)), dimension, seed)


# --- loss and gradients ------------------------------------------------------

def margin_loss_and_grads(
    entities: np.ndarray,
    relations: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    margin: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed margin ranking loss and dense gradients for paired triples.

    pos and neg are (n, 3) index arrays of (subject, relation, object) rows
    into the embedding matrices; pair i contrasts pos[i] against neg[i].
    """
    d_pos, u_pos = _distances_and_units(entities, relations, pos)
    d_neg, u_neg = _distances_and_units(entities, relations, neg)
    viol = margin + d_pos - d_neg
    active = viol > 0
    loss = float(np.sum(viol[active]))
    grad_e = np.zeros_like(entities)
    grad_r = np.zeros_like(relations)
    if np.any(active):
        up = u_pos[active]
        un = u_neg[active]
        pa, na = pos[active], neg[active]
        np.add.at(grad_e, pa[:, 0], up)
        np.add.at(grad_r, pa[:, 1], up)
        np.add.at(grad_e, pa[:, 2], -up)
        np.add.at(grad_e, na[:, 0], -un)
        np.add.at(grad_r, na[:, 1], -un)
        np.add.at(grad_e, na[:, 2], un)
    return loss, grad_e, grad_r


def _distances_and_units(
    entities: np.ndarray, relations: np.ndarray, idx: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    diff = entities[idx[:, 0]] + relations[idx[:, 1]] - entities[idx[:, 2]]
    dist = np.linalg.norm(diff, axis=1)
    units = diff / np.maximum(dist, 1e-12)[:, None]
    return dist, units


# --- training ----------------------------------------------------------------

def _index_graph(graph: KnowledgeGraph):
    entity_names = sorted(graph.entities)
    relation_names = sorted(graph.relations)
    ent_idx = {n: i for i, n in enumerate(entity_names)}
    rel_idx = {n: i for i, n in enumerate(relation_names)}
    triples = np.array(
        [(ent_idx[t.subject], rel_idx[t.predicate], ent_idx[t.object]) for t in graph.triples],
        dtype=np.int64,
    )
    return entity_names, relation_names, triples


def _init_vectors(rng: np.random.Generator, count: int, dimension: int) -> np.ndarray:
    bound = 6.0 / math.sqrt(dimension)
    return rng.uniform(-bound, bound, size=(count, dimension))


def untrained_model(graph: KnowledgeGraph, config: TrainConfig) -> EmbeddingModel:
    """Seeded random initialization with identity calibration (baseline for evals)."""
    if len(graph) == 0:
        raise ValueError("graph is empty")
    entity_names, relation_names, _ = _index_graph(graph)
    rng = np.random.default_rng(config.rng_seed)
    entities = _init_vectors(rng, len(entity_names), config.dimension)
    relations = _init_vectors(rng, len(relation_names), config.dimension)
    relations /= np.maximum(np.linalg.norm(relations, axis=1), 1e-12)[:, None]
    return EmbeddingModel(
        dict(zip(entity_names, entities)),
        dict(zip(relation_names, relations)),
        (1.0, 0.0),
        config.dimension,
        config.rng_seed,
    )


def _triple_keys(triples: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    return (triples[:, 0] * n_relations + triples[:, 1]) * n_entities + triples[:, 2]


# Fraction of corruptions drawn from the corrupted slot's per-relation candidate
# pool rather than from all entities. Typed corruptions concentrate the ranking
# signal on the confusions that matter (e.g. the same instance with a different
# intention), which many-to-one relations need under a translational model.
_TYPED_NEGATIVE_FRACTION = 0.7


class _RelationPools:
    """Observed subject and object entity pools per relation."""

    def __init__(self, triples: np.ndarray, n_relations: int):
        self.subjects = []
        self.objects = []
        for r in range(n_relations):
            rows = triples[triples[:, 1] == r]
            self.subjects.append(np.unique(rows[:, 0]))
            self.objects.append(np.unique(rows[:, 2]))


def _sample_negatives(
    rng: np.random.Generator,
    positives: np.ndarray,
    n_entities: int,
    n_relations: int,
    k: int,
    true_keys: np.ndarray,
    pools: _RelationPools | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """k corruptions per positive, avoiding corruptions that are true triples.

    true_keys is the sorted packed-key array of all training triples. When a
    typed pool substitution leaves no alternative (pool of size 1), the
    fallback is a uniform entity.
    """
    reps = np.repeat(positives, k, axis=0)
    neg = reps.copy()
    corrupt_obj = rng.random(len(neg)) < 0.5
    candidates = rng.integers(0, n_entities, size=len(neg))
    if pools is not None:
        typed = rng.random(len(neg)) < _TYPED_NEGATIVE_FRACTION
        pool_pick = rng.random(len(neg))
        for r in np.unique(neg[:, 1]):
            for side, pool in ((True, pools.objects[r]), (False, pools.subjects[r])):
                if len(pool) < 2:
                    continue
                rows = typed & (neg[:, 1] == r) & (corrupt_obj == side)
                if not rows.any():
                    continue
                idx = (pool_pick[rows] * len(pool)).astype(np.int64)
                candidates[rows] = pool[np.minimum(idx, len(pool) - 1)]
    neg[corrupt_obj, 2] = candidates[corrupt_obj]
    neg[~corrupt_obj, 0] = candidates[~corrupt_obj]
    for _ in range(64):
        keys = _triple_keys(neg, n_entities, n_relations)
        pos = np.searchsorted(true_keys, keys)
        pos = np.minimum(pos, len(true_keys) - 1)
        bad = np.where(true_keys[pos] == keys)[0]
        if bad.size == 0:
            break
        fresh = rng.integers(0, n_entities, size=bad.size)
        obj_rows = bad[corrupt_obj[bad]]
        sub_rows = bad[~corrupt_obj[bad]]
        neg[obj_rows, 2] = fresh[corrupt_obj[bad]]
        neg[sub_rows, 0] = fresh[~corrupt_obj[bad]]
    return reps, neg


def train(graph: KnowledgeGraph, config: TrainConfig = TrainConfig()) -> EmbeddingModel:
    """Fit embeddings on the graph and calibrate scores against corruptions.

    Raises TrainingDivergedError (naming the epoch) if the loss goes
    non-finite, which with plain SGD signals a learning rate too large for
    the graph at hand.
    """
    if len(graph) == 0:
        raise ValueError("graph is empty")
    entity_names, relation_names, triples = _index_graph(graph)
    n_e, n_r = len(entity_names), len(relation_names)
    rng = np.random.default_rng(config.rng_seed)
    entities = _init_vectors(rng, n_e, config.dimension)
    relations = _init_vectors(rng, n_r, config.dimension)
    relations /= np.maximum(np.linalg.norm(relations, axis=1), 1e-12)[:, None]
    true_keys = np.sort(_triple_keys(triples, n_e, n_r))
    pools = _RelationPools(triples, n_r)

    for epoch in range(config.epochs):
        entities /= np.maximum(np.linalg.norm(entities, axis=1), 1e-12)[:, None]
        order = rng.permutation(len(triples))
        epoch_loss = 0.0
        for start in range(0, len(order), _BATCH_SIZE):
            batch = triples[order[start : start + _BATCH_SIZE]]
            pos, neg = _sample_negatives(
                rng, batch, n_e, n_r, config.negatives_per_positive, true_keys, pools
            )
            loss, grad_e, grad_r = margin_loss_and_grads(
                entities, relations, pos, neg, config.margin
            )
            entities -= config.learning_rate * grad_e
            relations -= config.learning_rate * grad_r
            epoch_loss += loss
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            logger.debug("epoch %d loss %.4f", epoch, epoch_loss)

    calibration = _fit_calibration(rng, entities, relations, triples, n_e, n_r, true_keys)
    return EmbeddingModel(
        dict(zip(entity_names, entities)),
        dict(zip(relation_names, relations)),
        calibration,
        config.dimension,
        config.rng_seed,
    )


def _platt_objective(a: float, b: float, scores: np.ndarray, targets: np.ndarray,
                     ridge: float) -> float:
    z = a * scores + b
    # log(1+e^z) computed stably for both signs of z
    log1pexp = np.logaddexp(0.0, z)
    nll = float(np.sum(log1pexp - targets * z))
    return nll + 0.5 * ridge * (a * a + b * b)


def _fit_platt(scores: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Damped-Newton logistic fit of sigmoid(a*score + b) to soft targets."""
    a, b = 1.0, 0.0
    ridge = 1e-6
    obj = _platt_objective(a, b, scores, targets, ridge)
    for _ in range(200):
        z = np.clip(a * scores + b, -500.0, 500.0)
        p = 1.0 / (1.0 + np.exp(-z))
        w = np.maximum(p * (1.0 - p), 1e-12)
        g_a = float(np.dot(p - targets, scores)) + ridge * a
        g_b = float(np.sum(p - targets)) + ridge * b
        h_aa = float(np.dot(w, scores * scores)) + ridge
        h_ab = float(np.dot(w, scores))
        h_bb = float(np.sum(w)) + ridge
        det = h_aa * h_bb - h_ab * h_ab
        if det <= 0:
            break
        da = (h_bb * g_a - h_ab * g_b) / det
        db = (h_aa * g_b - h_ab * g_a) / det
        # backtracking keeps Newton from overshooting on separable scores
        step = 1.0
        improved = False
        for _ in range(40):
            cand = _platt_objective(a - step * da, b - step * db, scores, targets, ridge)
            if cand < obj:
                a, b = a - step * da, b - step * db
                obj = cand
                improved = True
                break
            step *= 0.5
        if not improved or (abs(da) < 1e-10 and abs(db) < 1e-10):
            break
    return float(a), float(b)


def _fit_calibration(
    rng: np.random.Generator,
    entities: np.ndarray,
    relations: np.ndarray,
    triples: np.ndarray,
    n_entities: int,
    n_relations: int,
    true_keys: np.ndarray,
) -> tuple[float, float]:
    """Platt scaling of raw scores: positives vs one corruption per positive."""
    _, neg = _sample_negatives(rng, triples, n_entities, n_relations, 1, true_keys)
    d_pos, _ = _distances_and_units(entities, relations, triples)
    d_neg, _ = _distances_and_units(entities, relations, neg)
    scores = np.concatenate([-d_pos, -d_neg])
    n_pos, n_neg = len(d_pos), len(d_neg)
    # Platt's soft targets prevent divergence on separable score sets.
    targets = np.concatenate(
        [
            np.full(n_pos, (n_pos + 1.0) / (n_pos + 2.0)),
            np.full(n_neg, 1.0 / (n_neg + 2.0)),
        ]
    )
    a, b = _fit_platt(scores, targets)
    if a <= 0:
        raise TrainingDivergedError(
            "calibration produced a non-positive scale; positives do not outscore corruptions"
        )
    return a, b


# --- ranking evaluation ------------------------------------------------------

@dataclass(frozen=True)
class RankMetrics:
    mrr: float
    hits_at_1: float
    hits_at_3: float
    mean_rank: float
    count: int


def rank_eval(
    model: EmbeddingModel,
    held_out: Iterable[Triple],
    known_true: Iterable[Triple] = (),
) -> RankMetrics:
    """Filtered link-prediction ranks over subject and object corruptions.

    Corruptions that form a triple listed in known_true (other than the test
    triple itself) are excluded from the candidate pool.
    """
    held = list(held_out)
    if not held:
        raise ValueError("held_out is empty")
    entity_names = sorted(model.entity_vectors)
    ent_mat = np.stack([model.entity_vectors[n] for n in entity_names])
    known = set(known_true)
    ranks = []
    for triple in held:
        s, p, o = model._lookup(triple)
        true_dist = float(np.linalg.norm(s + p - o))
        # object-side corruption: distances to every candidate object
        obj_dist = np.linalg.norm((s + p)[None, :] - ent_mat, axis=1)
        mask = np.array(
            [
                name != triple.object
                and Triple(triple.subject, triple.predicate, name) in known
                for name in entity_names
            ]
        )
        obj_dist = obj_dist[~mask]
        ranks.append(1 + int(np.sum(obj_dist < true_dist)))
        # subject-side corruption
        sub_dist = np.linalg.norm(ent_mat + (p - o)[None, :], axis=1)
        mask = np.array(
            [
                name != triple.subject
                and Triple(name, triple.predicate, triple.object) in known
                for name in entity_names
            ]
        )
        sub_dist = sub_dist[~mask]
        ranks.append(1 + int(np.sum(sub_dist < true_dist)))
    arr = np.array(ranks, dtype=np.float64)
    return RankMetrics(
        mrr=float(np.mean(1.0 / arr)),
        hits_at_1=float(np.mean(arr <= 1)),
        hits_at_3=float(np.mean(arr <= 3)),
        mean_rank=float(np.mean(arr)),
        count=len(ranks),
    )
