import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbgae.data import NULL_CLASS
from dbgae.inference import (
    Prediction,
    _argmax_class,
    baseline_cluster_voting,
    baseline_pair_clustering,
    load_predictions,
    pool_labels,
    save_predictions,
)
from dbgae.model import RatingMatrix
from test_data import make_dataset
from test_model import make_graph


def make_ratings(graph, rows):
    """rows: list of (src, dst, kind, m_hat)."""
    src, dst, kind, m_hat = (np.asarray(x) for x in zip(*rows))
    levels = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    probs = np.zeros((len(rows), 5))
    probs[:, -1] = 1.0  # placeholder distribution; pooling uses m_hat only
    return RatingMatrix(
        src=src.astype(int),
        dst=dst.astype(int),
        kind=kind.astype(str),
        levels=levels,
        probs=probs,
        m_hat=m_hat.astype(float),
        num_instances=graph.num_instances,
    )


class TestPooling:
    def test_instance_with_no_edges_predicts_null(self):
        graph = make_graph(
            inst_feats=[[1.0, 0.0]], inst_group=[0], label_class=[0], label_group=[0],
            num_classes=2,
        )
        ratings = make_ratings(graph, [(0, 0, "within", 0.0)])
        # zero m_hat -> zero score -> null; and an instance absent from the
        # ratings entirely behaves the same
        preds = pool_labels(ratings, graph)
        assert preds[0].predicted_class == NULL_CLASS

    def test_within_contribution_thresholded(self):
        graph = make_graph(
            inst_feats=[[1.0, 0.0]], inst_group=[0], label_class=[0], label_group=[0],
            within=[(0, 0, 1.0, 1)], num_classes=2,
        )
        preds = pool_labels(make_ratings(graph, [(0, 0, "within", 0.9)]), graph)
        assert preds[0].predicted_class == 0
        assert preds[0].scores[0] == pytest.approx(0.4)

    def test_cross_contribution_scaled_by_cosine(self):
        # cosine 0.5 between instance 0 and its via neighbor 1
        graph = make_graph(
            inst_feats=[[1.0, 0.0], [0.5, np.sqrt(3) / 2]],
            inst_group=[0, 1],
            label_class=[0],
            label_group=[1],
            cross=[(0, 0, 0.8, 1)],
            num_classes=2,
        )
        preds = pool_labels(make_ratings(graph, [(0, 0, "cross", 0.8)]), graph)
        # 0.8 * 0.5 - 0.5 < 0 -> no positive score -> null
        assert preds[0].predicted_class == NULL_CLASS
        assert preds[0].scores == {}

    def test_zero_norm_feature_gives_zero_cosine(self):
        graph = make_graph(
            inst_feats=[[0.0, 0.0], [1.0, 0.0]],
            inst_group=[0, 1],
            label_class=[0],
            label_group=[1],
            cross=[(0, 0, 1.0, 1)],
            num_classes=2,
        )
        preds = pool_labels(make_ratings(graph, [(0, 0, "cross", 1.0)]), graph)
        assert preds[0].predicted_class == NULL_CLASS

    def test_scores_accumulate_per_class(self):
        graph = make_graph(
            inst_feats=[[1.0, 0.0]],
            inst_group=[0],
            label_class=[0, 0, 1],
            label_group=[0, 0, 0],
            within=[(0, 0, 1.0, 1), (0, 1, 1.0, 1), (0, 2, 1.0, 1)],
            num_classes=2,
        )
        ratings = make_ratings(
            graph,
            [(0, 0, "within", 0.7), (0, 1, "within", 0.7), (0, 2, "within", 0.8)],
        )
        preds = pool_labels(ratings, graph)
        # class 0 pools 0.2 + 0.2, class 1 pools 0.3 -> class 0 wins
        assert preds[0].predicted_class == 0
        assert preds[0].scores[0] == pytest.approx(0.4)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_argmax_invariant_under_increasing_transform(self, seed):
        rng = np.random.default_rng(seed)
        scores = np.maximum(rng.standard_normal(6), 0.0)
        transformed = np.where(scores > 0, scores**3 + 2 * scores, 0.0)
        assert _argmax_class(scores) == _argmax_class(transformed)

    def test_total_function_over_instances(self):
        graph = make_graph(
            inst_feats=[[1.0, 0.0], [0.0, 1.0]],
            inst_group=[0, 1],
            label_class=[0],
            label_group=[0],
            within=[(0, 0, 1.0, 1)],
            num_classes=2,
        )
        preds = pool_labels(make_ratings(graph, [(0, 0, "within", 0.9)]), graph)
        assert [p.instance_id for p in preds] == [0, 1]
        assert preds[1].predicted_class == NULL_CLASS


class TestClusterVoting:
    def _identical_feature_dataset(self):
        # instances 0,1,2 share features (one cluster); groups carry labels
        # {A}, {A}, {B}; a far-away noise instance sits in group 3 with {A}
        ds = make_dataset(
            [([0], [0]), ([0], [0]), ([0], [1]), ([1], [0])], num_classes=2, feature_dim=2
        )
        shared = np.array([1.0, 1.0])
        for gid in range(3):
            inst = ds.groups[gid].instances[0]
            ds.groups[gid].instances[0] = inst.__class__(
                instance_id=inst.instance_id,
                group_id=gid,
                features=shared,
                true_class=inst.true_class,
            )
        far = ds.groups[3].instances[0]
        ds.groups[3].instances[0] = far.__class__(
            instance_id=far.instance_id,
            group_id=3,
            features=np.array([50.0, 50.0]),
            true_class=far.true_class,
        )
        return ds

    def test_majority_vote_over_cluster_groups(self):
        ds = self._identical_feature_dataset()
        preds = {p.instance_id: p for p in baseline_cluster_voting(ds, eps=1.0, min_pts=2)}
        for iid in (0, 1, 2):
            assert preds[iid].predicted_class == 0  # votes {A:2, B:1}

    def test_noise_instance_uses_own_group(self):
        ds = self._identical_feature_dataset()
        preds = {p.instance_id: p for p in baseline_cluster_voting(ds, eps=1.0, min_pts=2)}
        assert preds[3].predicted_class == 0

    def test_tie_breaks_to_lowest_class_id(self):
        ds = make_dataset([([0], [1, 0])], num_classes=2)
        preds = baseline_cluster_voting(ds, eps=1.0, min_pts=2)
        assert preds[0].predicted_class == 0

    def test_empty_pool_predicts_null(self):
        ds = make_dataset([([0], [])], num_classes=1)
        preds = baseline_cluster_voting(ds, eps=1.0, min_pts=2)
        assert preds[0].predicted_class == NULL_CLASS


class TestPairClustering:
    def test_largest_cooccurrence_wins(self):
        # class-1 pair repeats in 3 groups (c=3); class-0 label unique (c=1)
        specs = [([1], [1, 0]), ([1], [1]), ([1], [1])]
        ds = make_dataset(specs, num_classes=2, feature_dim=2)
        shared = np.array([2.0, -1.0])
        for group in ds.groups:
            inst = group.instances[0]
            group.instances[0] = inst.__class__(
                instance_id=inst.instance_id,
                group_id=group.group_id,
                features=shared,
                true_class=1,
            )
        preds = {p.instance_id: p for p in baseline_pair_clustering(ds, eps=1.0, min_pts=2)}
        assert preds[0].predicted_class == 1

    def test_all_noise_ties_break_to_lowest_class(self):
        ds = make_dataset([([0], [2, 1])], num_classes=3)
        preds = baseline_pair_clustering(ds, eps=1.0, min_pts=2)
        assert preds[0].predicted_class == 1

    def test_no_labels_predicts_null(self):
        ds = make_dataset([([0], [])], num_classes=1)
        preds = baseline_pair_clustering(ds, eps=1.0, min_pts=2)
        assert preds[0].predicted_class == NULL_CLASS


class TestPredictionsIO:
    def test_round_trip(self, tmp_path):
        preds = [
            Prediction(instance_id=0, predicted_class=2, scores={2: 0.5, 1: 0.1}),
            Prediction(instance_id=1, predicted_class=NULL_CLASS, scores={}),
        ]
        path = tmp_path / "pred.jsonl"
        save_predictions(preds, "dbgae", path)
        method, loaded = load_predictions(path)
        assert method == "dbgae"
        assert loaded == preds
