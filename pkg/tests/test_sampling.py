import math

import numpy as np
import pytest

from pctrack.sampling import (
    SampleSelection,
    ras_scores,
    sample_dfps,
    sample_ffps,
    sample_hybrid,
    sample_random,
    sample_ras,
)
from helpers import foreground_fixture, greedy_fps_oracle, ras_sort_oracle


# ---------------------------------------------------------------- random


def test_random_full_draw_is_permutation():
    sel = sample_random(8, 8, np.random.default_rng(0))
    assert sorted(sel.indices.tolist()) == list(range(8))
    assert not sel.padded


def test_random_single():
    sel = sample_random(1, 1, np.random.default_rng(0))
    assert sel.indices.tolist() == [0]


def test_random_seeded_regression():
    sel = sample_random(10, 4, np.random.default_rng(42))
    assert sel.indices.tolist() == [5, 6, 0, 7]


def test_random_unique_when_not_padded():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 50))
        k = int(rng.integers(1, n + 1))
        sel = sample_random(n, k, rng)
        assert len(set(sel.indices.tolist())) == k
        assert sel.k == k


def test_random_padding_round_robin():
    sel = sample_random(3, 8, np.random.default_rng(5))
    assert sel.padded
    assert sel.k == 8
    base = sel.indices[:3].tolist()
    assert sel.indices.tolist() == base + base + base[:2]


# ---------------------------------------------------------------- D-FPS / F-FPS


def test_dfps_all_points():
    coords = np.random.default_rng(2).normal(size=(6, 3))
    sel = sample_dfps(coords, 6)
    assert sorted(sel.indices.tolist()) == list(range(6))


def test_dfps_line_fixture():
    coords = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [10, 0, 0]])
    assert sample_dfps(coords, 3).indices.tolist() == [0, 4, 3]


def test_dfps_coincident_points_selected_last():
    rng = np.random.default_rng(3)
    for _ in range(30):
        pts = rng.normal(size=(4, 3))
        pts = np.vstack([pts, pts[1]])  # index 4 duplicates index 1
        order = sample_dfps(pts, 5).indices.tolist()
        dup_pos = max(order.index(1), order.index(4))
        assert dup_pos == 4  # one of the twins always comes last


def test_dfps_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(25):
        n = int(rng.integers(2, 64))
        pts = rng.normal(size=(n, 3))
        k = int(rng.integers(1, n + 1))
        start = int(rng.integers(0, n))
        got = sample_dfps(pts, k, start_index=start).indices.tolist()
        assert got == greedy_fps_oracle(pts, k, start)


def test_ffps_matches_oracle_in_feature_space():
    rng = np.random.default_rng(5)
    for _ in range(15):
        n = int(rng.integers(2, 48))
        feats = rng.normal(size=(n, 8))
        k = int(rng.integers(1, n + 1))
        got = sample_ffps(feats, k).indices.tolist()
        assert got == greedy_fps_oracle(feats, k, 0)


def test_ffps_on_coordinates_equals_dfps():
    rng = np.random.default_rng(6)
    coords = rng.normal(size=(30, 3))
    np.testing.assert_array_equal(
        sample_ffps(coords, 12).indices, sample_dfps(coords, 12).indices
    )


def test_ffps_one_hot_features_all_distinct_first():
    eye = np.eye(5)
    feats = np.vstack([eye, eye[2]])  # a duplicate one-hot at index 5
    order = sample_ffps(feats, 6).indices.tolist()
    assert sorted(order[:5]) == [0, 1, 2, 3, 4]


def test_fps_start_index_validation():
    pts = np.zeros((3, 3))
    with pytest.raises(ValueError):
        sample_dfps(pts, 2, start_index=3)


# ---------------------------------------------------------------- relation scores


def test_ras_scores_zero_on_exact_match():
    template = np.array([[1.0, 0.0], [0.0, 1.0]])
    search = np.array([[0.0, 1.0], [5.0, 5.0]])
    v = ras_scores(search, template)
    assert v[0] == pytest.approx(0.0, abs=1e-12)


def test_ras_scores_hand_fixture():
    template = np.array([[1.0, 0.0], [0.0, 1.0]])
    search = np.array([[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0], [0.0, -1.0]])
    v = ras_scores(search, template)
    np.testing.assert_allclose(
        v, [0.0, math.sqrt(0.02), math.sqrt(2.0), math.sqrt(2.0)], atol=1e-12
    )


def test_ras_scores_template_permutation_invariant():
    rng = np.random.default_rng(7)
    template = rng.normal(size=(6, 4))
    search = rng.normal(size=(10, 4))
    v0 = ras_scores(search, template)
    v1 = ras_scores(search, template[rng.permutation(6)])
    np.testing.assert_allclose(v0, v1, atol=1e-12)


def test_ras_scores_rejects_empty_template():
    with pytest.raises(ValueError):
        ras_scores(np.zeros((3, 2)), np.zeros((0, 2)))


def test_ras_scores_rejects_width_mismatch():
    with pytest.raises(ValueError):
        ras_scores(np.zeros((3, 2)), np.zeros((4, 3)))


# ---------------------------------------------------------------- RAS selection


def test_ras_picks_exact_match_first():
    template = np.array([[1.0, 0.0], [0.0, 1.0]])
    search = np.array([[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0], [0.0, -1.0]])
    sel = sample_ras(search, template, 2)
    assert sel.indices[0] == 0


def test_ras_full_budget_selects_all():
    rng = np.random.default_rng(8)
    sel = sample_ras(rng.normal(size=(9, 4)), rng.normal(size=(3, 4)), 9)
    assert sorted(sel.indices.tolist()) == list(range(9))


def test_ras_matches_sort_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(2, 40))
        search = rng.normal(size=(n, 5))
        template = rng.normal(size=(int(rng.integers(1, 10)), 5))
        k = int(rng.integers(1, n + 1))
        got = sample_ras(search, template, k).indices.tolist()
        assert got == ras_sort_oracle(search, template, k)


def test_ras_ties_break_low_index():
    template = np.zeros((1, 2))
    search = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])  # all distance 1
    sel = sample_ras(search, template, 2)
    assert sel.indices.tolist() == [0, 1]


# ---------------------------------------------------------------- hybrid


def test_hybrid_requires_even_k():
    with pytest.raises(ValueError, match="even"):
        sample_hybrid(np.zeros((10, 2)), np.zeros((2, 2)), 5, np.random.default_rng(0))


def test_hybrid_full_budget_selects_all():
    rng = np.random.default_rng(10)
    sel = sample_hybrid(rng.normal(size=(8, 3)), rng.normal(size=(3, 3)), 8, rng)
    assert sorted(sel.indices.tolist()) == list(range(8))


def test_hybrid_ras_half_has_smallest_scores():
    rng = np.random.default_rng(11)
    for _ in range(10):
        search = rng.normal(size=(30, 4))
        template = rng.normal(size=(6, 4))
        v = ras_scores(search, template)
        sel = sample_hybrid(search, template, 10, rng)
        smallest = set(np.argsort(v, kind="stable")[:5].tolist())
        assert set(sel.indices[:5].tolist()) == smallest


def test_hybrid_halves_are_disjoint():
    rng = np.random.default_rng(12)
    search = rng.normal(size=(40, 4))
    template = rng.normal(size=(5, 4))
    sel = sample_hybrid(search, template, 16, rng)
    assert len(set(sel.indices.tolist())) == 16


def test_hybrid_seeded_regression():
    rng = np.random.default_rng(7)
    template = rng.normal(size=(5, 3))
    search = rng.normal(size=(12, 3))
    sel = sample_hybrid(search, template, 6, np.random.default_rng(99))
    assert sel.indices.tolist() == [8, 7, 2, 11, 9, 5]


# ---------------------------------------------------------------- direction


def test_relation_sampling_keeps_more_foreground():
    """On object+clutter scenes, relation-guided picks beat blind ones."""
    k = 32
    frac = {"ras": [], "hybrid": [], "random": [], "dfps": [], "ffps": []}
    for seed in range(40):
        rng = np.random.default_rng(1000 + seed)
        search, template, fg_mask = foreground_fixture(rng)
        sels = {
            "ras": sample_ras(search, template, k),
            "hybrid": sample_hybrid(search, template, k, rng),
            "random": sample_random(len(search), k, rng),
            "dfps": sample_dfps(search, k),
            "ffps": sample_ffps(search, k),
        }
        for name, sel in sels.items():
            frac[name].append(fg_mask[sel.indices].mean())
    means = {name: float(np.mean(vals)) for name, vals in frac.items()}
    assert means["ras"] > means["random"]
    assert means["ras"] > means["dfps"]
    assert means["ras"] > means["ffps"]
    assert means["hybrid"] >= means["random"]


# ---------------------------------------------------------------- general


@pytest.mark.parametrize("n,k", [(5, 3), (5, 5), (3, 7)])
def test_selection_lengths(n, k):
    rng = np.random.default_rng(13)
    feats = rng.normal(size=(n, 4))
    template = rng.normal(size=(2, 4))
    for sel in (
        sample_random(n, k, rng),
        sample_dfps(feats[:, :3], k),
        sample_ffps(feats, k),
        sample_ras(feats, template, k),
    ):
        assert sel.k == k
        assert (sel.indices < n).all() and (sel.indices >= 0).all()
        assert sel.padded == (k > n)


def test_selection_type_carries_method_tag():
    sel = sample_random(4, 2, np.random.default_rng(14))
    assert isinstance(sel, SampleSelection)
    assert sel.method == "random"
