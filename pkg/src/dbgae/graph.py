"""Dual bipartite graph construction.

Within-group candidate links are clustered by their concatenated
instance/one-hot-label tuple features (DBSCAN) to estimate co-occurrence
counts, then normalized against contradictory links to get weights in
(0, 1].  Cross-group links are induced through homogeneous neighbors:
instances within a feature-distance threshold in other groups donate
their within-link weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import GpllDataset
from .errors import ConfigError, ParseError, SchemaError

NOISE = -1
_UNVISITED = -2


@dataclass
class ClusterAssignment:
    """Per-point cluster ids (NOISE = -1) with per-cluster sizes."""

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def num_clusters(self) -> int:
        return len(self.sizes)


def _neighbor_matrix(points: np.ndarray, eps: float) -> np.ndarray:
    """Boolean adjacency: squared distance <= eps**2 (closed ball, self included)."""
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    return d2 <= eps * eps


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> ClusterAssignment:
    """Density-based clustering with deterministic border assignment.

    Points are processed in ascending index order and border points join
    the first core cluster whose expansion reaches them.  A core point has
    at least ``min_pts`` points (itself included) within ``eps``.
    """
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    if min_pts < 1:
        raise ConfigError("min_pts must be >= 1")
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n == 0:
        return ClusterAssignment(labels=np.zeros(0, dtype=int), sizes=np.zeros(0, dtype=int))

    adj = _neighbor_matrix(points, eps)
    neighbor_counts = adj.sum(axis=1)
    labels = np.full(n, _UNVISITED, dtype=int)
    cluster = 0
    for start in range(n):
        if labels[start] != _UNVISITED:
            continue
        if neighbor_counts[start] < min_pts:
            labels[start] = NOISE
            continue
        labels[start] = cluster
        queue = list(np.flatnonzero(adj[start]))
        head = 0
        while head < len(queue):
            q = queue[head]
            head += 1
            if labels[q] == NOISE:
                labels[q] = cluster  # border point
            if labels[q] != _UNVISITED:
                continue
            labels[q] = cluster
            if neighbor_counts[q] >= min_pts:
                queue.extend(np.flatnonzero(adj[q]))
        cluster += 1

    sizes = np.bincount(labels[labels >= 0], minlength=cluster).astype(int)
    return ClusterAssignment(labels=labels, sizes=sizes)


# ---------------------------------------------------------------------------
# graph containers
# ---------------------------------------------------------------------------


@dataclass
class WithinLinks:
    """All within-group candidate links with co-occurrence counts."""

    inst: np.ndarray  # (E,) instance row index
    lab: np.ndarray  # (E,) label row index
    count: np.ndarray  # (E,) cluster size, noise links get 1


@dataclass
class WithinGraph:
    inst: np.ndarray
    lab: np.ndarray
    weight: np.ndarray
    count: np.ndarray
    omega: np.ndarray  # observation mask, 1 for every retained edge


@dataclass
class CrossGraph:
    inst: np.ndarray
    lab: np.ndarray
    weight: np.ndarray
    via: np.ndarray  # homogeneous neighbor donating the weight


@dataclass
class DualBipartiteGraph:
    """Instance and label-occurrence nodes with within/cross weighted edges.

    Instance rows follow dataset iteration order; label rows follow
    (group, slot) order.  In the unified node id space instances occupy
    [0, N) and label nodes [N, N + M).
    """

    instance_ids: np.ndarray
    instance_group: np.ndarray
    instance_features: np.ndarray
    label_group: np.ndarray
    label_class: np.ndarray
    label_slot: np.ndarray
    num_classes: int
    within: WithinGraph
    cross: CrossGraph

    @property
    def num_instances(self) -> int:
        return len(self.instance_ids)

    @property
    def num_label_nodes(self) -> int:
        return len(self.label_class)

    @property
    def feature_dim(self) -> int:
        return self.instance_features.shape[1]

    def label_onehot(self) -> np.ndarray:
        onehot = np.zeros((self.num_label_nodes, self.num_classes))
        onehot[np.arange(self.num_label_nodes), self.label_class] = 1.0
        return onehot


def _index_dataset(ds: GpllDataset):
    inst_ids, inst_group, feats = [], [], []
    lab_group, lab_class, lab_slot = [], [], []
    group_inst_rows, group_lab_rows = [], []
    for group in ds.groups:
        rows = []
        for inst in group.instances:
            rows.append(len(inst_ids))
            inst_ids.append(inst.instance_id)
            inst_group.append(group.group_id)
            feats.append(inst.features)
        group_inst_rows.append(np.asarray(rows, dtype=int))
        rows = []
        for lab in sorted(group.labels, key=lambda l: l.slot):
            rows.append(len(lab_class))
            lab_group.append(group.group_id)
            lab_class.append(lab.class_id)
            lab_slot.append(lab.slot)
        group_lab_rows.append(np.asarray(rows, dtype=int))
    features = (
        np.asarray(feats, dtype=np.float64) if feats else np.zeros((0, ds.feature_dim))
    )
    return (
        np.asarray(inst_ids, dtype=int),
        np.asarray(inst_group, dtype=int),
        features,
        np.asarray(lab_group, dtype=int),
        np.asarray(lab_class, dtype=int),
        np.asarray(lab_slot, dtype=int),
        group_inst_rows,
        group_lab_rows,
    )


def count_cooccurrence(ds: GpllDataset, eps: float = 1.0, min_pts: int = 2) -> WithinLinks:
    """Cluster all within-group link tuples [x_i ; onehot(l_j)] and assign
    each link the size of its cluster; noise links count themselves (1)."""
    (_, _, features, _, lab_class, _, group_inst_rows, group_lab_rows) = _index_dataset(ds)
    inst_rows, lab_rows = [], []
    for gi, gl in zip(group_inst_rows, group_lab_rows):
        if len(gi) == 0 or len(gl) == 0:
            continue
        ii, ll = np.meshgrid(gi, gl, indexing="ij")
        inst_rows.append(ii.ravel())
        lab_rows.append(ll.ravel())
    if not inst_rows:
        empty = np.zeros(0, dtype=int)
        return WithinLinks(inst=empty, lab=empty.copy(), count=empty.copy())
    inst = np.concatenate(inst_rows)
    lab = np.concatenate(lab_rows)

    onehot = np.zeros((len(lab_class), ds.num_classes))
    if len(lab_class):
        onehot[np.arange(len(lab_class)), lab_class] = 1.0
    tuples = np.hstack([features[inst], onehot[lab]])
    assignment = dbscan(tuples, eps=eps, min_pts=min_pts)
    if assignment.num_clusters:
        count = np.where(
            assignment.labels >= 0,
            assignment.sizes[np.maximum(assignment.labels, 0)],
            1,
        ).astype(int)
    else:
        count = np.ones(len(inst), dtype=int)
    return WithinLinks(inst=inst, lab=lab, count=count)


def within_weights(links: WithinLinks) -> WithinGraph:
    """Normalize counts against contradictory links.

    For link (i, j): w = c_ij / ((sum_u c_iu + sum_v c_vj) - c_ij), where the
    sums run over all links sharing instance i resp. label node j (both
    include c_ij itself, de-duplicated by the subtraction).  A link with no
    contradictory links gets weight exactly 1.
    """
    if len(links.inst) == 0:
        empty = np.zeros(0)
        return WithinGraph(
            inst=links.inst, lab=links.lab, weight=empty, count=links.count, omega=empty.copy()
        )
    sum_by_inst = np.bincount(links.inst, weights=links.count)
    sum_by_lab = np.bincount(links.lab, weights=links.count)
    denom = sum_by_inst[links.inst] + sum_by_lab[links.lab] - links.count
    weight = links.count / denom
    return WithinGraph(
        inst=links.inst,
        lab=links.lab,
        weight=weight,
        count=links.count.copy(),
        omega=np.ones(len(links.inst)),
    )


def homogeneous_neighbors(
    features: np.ndarray, groups: np.ndarray, threshold: float
) -> list[np.ndarray]:
    """Per-instance list of cross-group instances within ``threshold`` (closed,
    Euclidean); self excluded, symmetric by construction."""
    if threshold <= 0:
        raise ConfigError("threshold must be > 0")
    n = len(features)
    if n == 0:
        return []
    sq = np.einsum("ij,ij->i", features, features)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    np.maximum(d2, 0.0, out=d2)
    close = d2 <= threshold * threshold
    close &= groups[:, None] != groups[None, :]
    return [np.flatnonzero(close[i]) for i in range(n)]


def cross_links(within: WithinGraph, neighbors: list[np.ndarray]) -> CrossGraph:
    """Donate each neighbor's within-link weights as cross links.

    Duplicate (instance, label) pairs keep the maximum weight; equal weights
    keep the lowest-index donating neighbor.
    """
    n = len(neighbors)
    edges_by_inst: list[np.ndarray] = [np.zeros(0, dtype=int) for _ in range(n)]
    if len(within.inst):
        order = np.argsort(within.inst, kind="stable")
        bounds = np.searchsorted(within.inst[order], np.arange(n + 1))
        for i in range(n):
            edges_by_inst[i] = order[bounds[i] : bounds[i + 1]]

    inst_parts, lab_parts, w_parts, via_parts = [], [], [], []
    for i in range(n):
        for j in neighbors[i]:
            eids = edges_by_inst[j]
            if len(eids) == 0:
                continue
            inst_parts.append(np.full(len(eids), i, dtype=int))
            lab_parts.append(within.lab[eids])
            w_parts.append(within.weight[eids])
            via_parts.append(np.full(len(eids), j, dtype=int))
    if not inst_parts:
        empty = np.zeros(0, dtype=int)
        return CrossGraph(inst=empty, lab=empty.copy(), weight=np.zeros(0), via=empty.copy())

    inst = np.concatenate(inst_parts)
    lab = np.concatenate(lab_parts)
    weight = np.concatenate(w_parts)
    via = np.concatenate(via_parts)
    order = np.lexsort((via, -weight, lab, inst))
    inst, lab, weight, via = inst[order], lab[order], weight[order], via[order]
    first = np.ones(len(inst), dtype=bool)
    first[1:] = (inst[1:] != inst[:-1]) | (lab[1:] != lab[:-1])
    return CrossGraph(inst=inst[first], lab=lab[first], weight=weight[first], via=via[first])


def build_dual_graph(
    ds: GpllDataset, eps: float = 1.0, min_pts: int = 2, threshold: float = 1.0
) -> DualBipartiteGraph:
    """Full construction: co-occurrence counts, within weights, cross links."""
    (
        inst_ids,
        inst_group,
        features,
        lab_group,
        lab_class,
        lab_slot,
        _,
        _,
    ) = _index_dataset(ds)
    links = count_cooccurrence(ds, eps=eps, min_pts=min_pts)
    within = within_weights(links)
    neighbors = homogeneous_neighbors(features, inst_group, threshold)
    cross = cross_links(within, neighbors)
    return DualBipartiteGraph(
        instance_ids=inst_ids,
        instance_group=inst_group,
        instance_features=features,
        label_group=lab_group,
        label_class=lab_class,
        label_slot=lab_slot,
        num_classes=ds.num_classes,
        within=within,
        cross=cross,
    )


# ---------------------------------------------------------------------------
# serialization (JSON Lines with "nodes" and "edges" sections)
# ---------------------------------------------------------------------------


def save_graph(graph: DualBipartiteGraph, path):
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "section": "nodes",
            "num_instances": graph.num_instances,
            "num_label_nodes": graph.num_label_nodes,
            "num_classes": graph.num_classes,
            "feature_dim": graph.feature_dim,
        }
        fh.write(json.dumps(meta, separators=(",", ":")) + "\n")
        for i in range(graph.num_instances):
            rec = {
                "node_id": i,
                "kind": "instance",
                "instance_id": int(graph.instance_ids[i]),
                "group_id": int(graph.instance_group[i]),
                "features": [float(x) for x in graph.instance_features[i]],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        offset = graph.num_instances
        for j in range(graph.num_label_nodes):
            rec = {
                "node_id": offset + j,
                "kind": "label",
                "group_id": int(graph.label_group[j]),
                "class_id": int(graph.label_class[j]),
                "slot": int(graph.label_slot[j]),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        fh.write(json.dumps({"section": "edges"}, separators=(",", ":")) + "\n")
        w = graph.within
        for k in range(len(w.inst)):
            rec = {
                "src": int(w.inst[k]),
                "dst": offset + int(w.lab[k]),
                "w": float(w.weight[k]),
                "kind": "within",
                "c": int(w.count[k]),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        x = graph.cross
        for k in range(len(x.inst)):
            rec = {
                "src": int(x.inst[k]),
                "dst": offset + int(x.lab[k]),
                "w": float(x.weight[k]),
                "kind": "cross",
                "via": int(x.via[k]),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_graph(path) -> DualBipartiteGraph:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")

    def parse(lineno: int) -> dict:
        try:
            return json.loads(lines[lineno])
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {lineno + 1}: {exc}") from exc

    meta = parse(0)
    if meta.get("section") != "nodes":
        raise SchemaError(f"{path}: first line must open the nodes section")
    n, m = int(meta["num_instances"]), int(meta["num_label_nodes"])
    num_classes, feature_dim = int(meta["num_classes"]), int(meta["feature_dim"])

    inst_ids = np.zeros(n, dtype=int)
    inst_group = np.zeros(n, dtype=int)
    features = np.zeros((n, feature_dim))
    lab_group = np.zeros(m, dtype=int)
    lab_class = np.zeros(m, dtype=int)
    lab_slot = np.zeros(m, dtype=int)
    w_edges: list[tuple] = []
    x_edges: list[tuple] = []
    section = "nodes"
    for lineno in range(1, len(lines)):
        rec = parse(lineno)
        if rec.get("section") == "edges":
            section = "edges"
            continue
        try:
            if section == "nodes":
                nid = int(rec["node_id"])
                if rec["kind"] == "instance":
                    inst_ids[nid] = int(rec["instance_id"])
                    inst_group[nid] = int(rec["group_id"])
                    feats = np.asarray(rec["features"], dtype=np.float64)
                    if feats.shape != (feature_dim,):
                        raise SchemaError(
                            f"{path}: line {lineno + 1}: feature dimension "
                            f"{feats.shape[0]} != {feature_dim}"
                        )
                    features[nid] = feats
                else:
                    j = nid - n
                    lab_group[j] = int(rec["group_id"])
                    lab_class[j] = int(rec["class_id"])
                    lab_slot[j] = int(rec["slot"])
                    if not 0 <= lab_class[j] < num_classes:
                        raise SchemaError(f"{path}: line {lineno + 1}: class_id out of range")
            else:
                src, dst = int(rec["src"]), int(rec["dst"]) - n
                if not (0 <= src < n and 0 <= dst < m):
                    raise SchemaError(f"{path}: line {lineno + 1}: edge endpoint out of range")
                if rec["kind"] == "within":
                    w_edges.append((src, dst, float(rec["w"]), int(rec["c"])))
                else:
                    x_edges.append((src, dst, float(rec["w"]), int(rec["via"])))
        except (KeyError, ValueError, IndexError) as exc:
            raise ParseError(f"{path}: line {lineno + 1}: {exc!r}") from exc

    def columns(rows, dtypes):
        if not rows:
            return [np.zeros(0, dtype=t) for t in dtypes]
        return [np.asarray(col, dtype=t) for col, t in zip(zip(*rows), dtypes)]

    wi, wl, ww, wc = columns(w_edges, (int, int, float, int))
    xi, xl, xw, xv = columns(x_edges, (int, int, float, int))
    return DualBipartiteGraph(
        instance_ids=inst_ids,
        instance_group=inst_group,
        instance_features=features,
        label_group=lab_group,
        label_class=lab_class,
        label_slot=lab_slot,
        num_classes=num_classes,
        within=WithinGraph(inst=wi, lab=wl, weight=ww, count=wc, omega=np.ones(len(wi))),
        cross=CrossGraph(inst=xi, lab=xl, weight=xw, via=xv),
    )


def graphs_equal(a: DualBipartiteGraph, b: DualBipartiteGraph) -> bool:
    return (
        a.num_classes == b.num_classes
        and np.array_equal(a.instance_ids, b.instance_ids)
        and np.array_equal(a.instance_group, b.instance_group)
        and np.array_equal(a.instance_features, b.instance_features)
        and np.array_equal(a.label_group, b.label_group)
        and np.array_equal(a.label_class, b.label_class)
        and np.array_equal(a.label_slot, b.label_slot)
        and all(
            np.array_equal(getattr(a.within, f), getattr(b.within, f))
            for f in ("inst", "lab", "weight", "count", "omega")
        )
        and all(
            np.array_equal(getattr(a.cross, f), getattr(b.cross, f))
            for f in ("inst", "lab", "weight", "via")
        )
    )
