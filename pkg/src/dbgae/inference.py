"""Turning refined link weights into per-instance label decisions.

Instance label pooling accumulates thresholded refined weights per class:
within links contribute max(0, m_hat - tau) directly; cross links are first
scaled by the cosine similarity between the instance and the homogeneous
neighbor that induced the link.  An instance with no positive class score
(or no links at all) is predicted null.

Two clustering baselines share the same prediction record: cluster voting
(majority class over the label multisets of all groups a feature cluster
touches) and pair clustering (largest co-occurrence count among the
instance's own candidate links).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import NULL_CLASS, GpllDataset
from .errors import ParseError, SchemaError
from .graph import DualBipartiteGraph, count_cooccurrence, dbscan
from .model import RatingMatrix

POOL_THRESHOLD = 0.5


@dataclass(frozen=True)
class Prediction:
    instance_id: int
    predicted_class: int  # NULL_CLASS when nothing scores positive
    scores: dict[int, float]


def _argmax_class(scores: np.ndarray) -> int:
    """Lowest class id among maxima; null when nothing is positive."""
    if scores.size == 0 or scores.max() <= 0.0:
        return NULL_CLASS
    return int(np.argmax(scores))


def pool_labels(
    ratings: RatingMatrix,
    graph: DualBipartiteGraph,
    tau: float = POOL_THRESHOLD,
    instance_vectors: np.ndarray | None = None,
) -> list[Prediction]:
    """Per-instance class pooling over refined link weights.

    ``instance_vectors`` defaults to the raw instance features; pass learned
    embeddings to switch the cosine similarity basis.
    """
    vectors = graph.instance_features if instance_vectors is None else instance_vectors
    if vectors.shape[0] != graph.num_instances:
        raise SchemaError("instance_vectors row count does not match the graph")

    via_by_edge: dict[tuple[int, int], int] = {
        (int(i), int(j)): int(v)
        for i, j, v in zip(graph.cross.inst, graph.cross.lab, graph.cross.via)
    }
    norms = np.linalg.norm(vectors, axis=1)
    scores = np.zeros((graph.num_instances, graph.num_classes))
    for k in range(len(ratings)):
        i, j = int(ratings.src[k]), int(ratings.dst[k])
        value = float(ratings.m_hat[k])
        if ratings.kind[k] == "cross":
            key = (i, j)
            if key not in via_by_edge:
                raise SchemaError(f"cross rating ({i}, {j}) has no matching graph edge")
            v = via_by_edge[key]
            denom = norms[i] * norms[v]
            cosine = float(vectors[i] @ vectors[v] / denom) if denom > 0 else 0.0
            value = value * cosine
        contribution = max(0.0, value - tau)
        scores[i, graph.label_class[j]] += contribution

    predictions = []
    for i in range(graph.num_instances):
        cls = _argmax_class(scores[i])
        nz = {int(c): float(s) for c, s in enumerate(scores[i]) if s > 0}
        predictions.append(
            Prediction(instance_id=int(graph.instance_ids[i]), predicted_class=cls, scores=nz)
        )
    return predictions


# ---------------------------------------------------------------------------
# clustering baselines
# ---------------------------------------------------------------------------


def baseline_cluster_voting(
    ds: GpllDataset, eps: float = 1.0, min_pts: int = 2
) -> list[Prediction]:
    """DBSCAN over instance features; majority vote over the label multisets
    of every group the cluster touches.  Noise instances vote over their own
    group only; empty pools predict null; ties take the lowest class id."""
    instances = list(ds.iter_instances())
    if not instances:
        return []
    features = np.stack([inst.features for inst in instances])
    assignment = dbscan(features, eps=eps, min_pts=min_pts)

    group_votes: dict[int, np.ndarray] = {}
    for group in ds.groups:
        votes = np.zeros(ds.num_classes)
        for lab in group.labels:
            votes[lab.class_id] += 1
        group_votes[group.group_id] = votes

    cluster_groups: dict[int, set[int]] = {}
    for inst, cid in zip(instances, assignment.labels):
        if cid >= 0:
            cluster_groups.setdefault(int(cid), set()).add(inst.group_id)
    cluster_votes = {
        cid: sum((group_votes[g] for g in groups), np.zeros(ds.num_classes))
        for cid, groups in cluster_groups.items()
    }

    predictions = []
    for inst, cid in zip(instances, assignment.labels):
        votes = cluster_votes[int(cid)] if cid >= 0 else group_votes[inst.group_id]
        cls = _argmax_class(votes)
        nz = {int(c): float(v) for c, v in enumerate(votes) if v > 0}
        predictions.append(
            Prediction(instance_id=inst.instance_id, predicted_class=cls, scores=nz)
        )
    return predictions


def baseline_pair_clustering(
    ds: GpllDataset, eps: float = 1.0, min_pts: int = 2
) -> list[Prediction]:
    """Pick each instance's candidate link with the largest co-occurrence
    cluster size; ties take the lowest label class id; no links predict null."""
    links = count_cooccurrence(ds, eps=eps, min_pts=min_pts)
    instances = list(ds.iter_instances())
    label_classes = np.asarray(
        [lab.class_id for group in ds.groups for lab in sorted(group.labels, key=lambda l: l.slot)],
        dtype=int,
    )

    best_class = {}
    best_scores: dict[int, dict[int, float]] = {}
    if len(links.inst):
        link_class = label_classes[links.lab]
        order = np.lexsort((link_class, -links.count, links.inst))
        inst_sorted = links.inst[order]
        firsts = np.ones(len(order), dtype=bool)
        firsts[1:] = inst_sorted[1:] != inst_sorted[:-1]
        for pos in np.flatnonzero(firsts):
            row = order[pos]
            best_class[int(inst_sorted[pos])] = int(link_class[row])
        for row in range(len(links.inst)):
            per = best_scores.setdefault(int(links.inst[row]), {})
            c = int(link_class[row])
            per[c] = max(per.get(c, 0.0), float(links.count[row]))

    predictions = []
    for row, inst in enumerate(instances):
        cls = best_class.get(row, NULL_CLASS)
        predictions.append(
            Prediction(
                instance_id=inst.instance_id,
                predicted_class=cls,
                scores=best_scores.get(row, {}),
            )
        )
    return predictions


# ---------------------------------------------------------------------------
# predictions file (JSON Lines with a method header)
# ---------------------------------------------------------------------------


def save_predictions(predictions: list[Prediction], method: str, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"method": method}, separators=(",", ":")) + "\n")
        for pred in predictions:
            rec = {
                "instance_id": pred.instance_id,
                "predicted_class": pred.predicted_class,
                "scores": {str(c): float(s) for c, s in sorted(pred.scores.items())},
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_predictions(path) -> tuple[str, list[Prediction]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
        method = str(header["method"])
        predictions = []
        for lineno in range(1, len(lines)):
            rec = json.loads(lines[lineno])
            predictions.append(
                Prediction(
                    instance_id=int(rec["instance_id"]),
                    predicted_class=int(rec["predicted_class"]),
                    scores={int(c): float(s) for c, s in rec["scores"].items()},
                )
            )
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc!r}") from exc
    return method, predictions
