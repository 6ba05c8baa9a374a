import numpy as np
import pytest

from poseuq import (
    DepthRenderer,
    MaskValConfig,
    Pose,
    PoseEstimate,
    Segmentation,
    box_mesh,
    certainty_two_stage,
    mask_iou,
    match_greedy,
    quantify_scene,
    uncertainty,
)
from poseuq.render import mask_from_depth


def test_uncertainty_branches():
    # visible enough: only the mask agreement counts
    assert uncertainty(0.9, 1.0, alpha=0.8) == 1.0 - 0.9
    assert uncertainty(0.9, 0.8, alpha=0.8) == 1.0 - 0.9  # v == alpha, no discount
    # poorly visible: certainty is discounted by the visible fraction
    assert uncertainty(0.8, 0.5, alpha=0.8) == 0.6
    assert uncertainty(0.0, 0.0) == 1.0
    assert uncertainty(1.0, 1.0) == 0.0


def test_uncertainty_validates_ranges():
    for bad in ((1.2, 0.5), (0.5, -0.1)):
        with pytest.raises(ValueError):
            uncertainty(*bad)
    with pytest.raises(ValueError):
        uncertainty(0.5, 0.5, alpha=2.0)


def test_greedy_takes_globally_best_first():
    iou = np.array([[0.2, 0.9], [0.8, 0.85]])
    m = match_greedy(iou)
    # 0.9 wins first, which forces pose 1 onto mask 0
    assert m.assignment == (1, 0)
    assert m.certainties[0] == 0.9
    assert m.certainties[1] == 0.8


def test_greedy_floor_leaves_pose_unmatched():
    iou = np.array([[0.5, 0.0], [0.0, 0.005]])
    m = match_greedy(iou, min_match_iou=0.01)
    assert m.assignment == (0, None)
    assert m.certainties[1] == 0.0


def test_greedy_tie_prefers_lowest_indices():
    iou = np.full((2, 2), 0.7)
    m = match_greedy(iou)
    assert m.assignment == (0, 1)


def test_greedy_shape_and_range_validation():
    with pytest.raises(ValueError):
        match_greedy(np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        match_greedy(np.array([[1.5]]))


def test_greedy_empty_sides():
    m = match_greedy(np.zeros((2, 0)))
    assert m.assignment == (None, None)
    assert match_greedy(np.zeros((0, 3))).assignment == ()


def test_two_stage_takes_diagonal():
    iou = np.array([[0.9, 0.1], [0.2, 0.7]])
    np.testing.assert_array_equal(certainty_two_stage(iou), [0.9, 0.7])
    with pytest.raises(ValueError):
        certainty_two_stage(np.zeros((2, 3)))


def scene_fixture(cam, z=0.5):
    """One box at the image center plus its exact rendered silhouette."""
    mesh = box_mesh(0.08)
    pose = Pose.from_rt(np.eye(3), [0.0, 0.0, z])
    res = DepthRenderer(pad_factor=3).render(pose, mesh, cam)
    return mesh, pose, mask_from_depth(res.depth)


def test_quantify_perfect_estimate_is_certain(cam64):
    mesh, pose, mask = scene_fixture(cam64)
    report = quantify_scene(
        [PoseEstimate(pose, "box")],
        [Segmentation(mask, "box")],
        {"box": mesh},
        cam64,
    )
    a = report[0]
    assert a.certainty == 1.0
    assert a.visibility == 1.0
    assert a.uncertainty == 0.0
    assert a.matched_segmentation == 0
    assert not a.unmatched and not a.truncated


def test_quantify_offset_estimate_scores_its_overlap(cam64):
    mesh, pose, mask = scene_fixture(cam64)
    shifted = Pose.from_rt(np.eye(3), [0.02, 0.0, 0.5])
    render_shifted = DepthRenderer(pad_factor=3).render(shifted, mesh, cam64)
    expected_c = mask_iou(mask_from_depth(render_shifted.depth), mask)
    report = quantify_scene(
        [PoseEstimate(shifted, "box")],
        [Segmentation(mask, "box")],
        {"box": mesh},
        cam64,
    )
    assert 0.0 < expected_c < 1.0
    assert report[0].certainty == expected_c
    assert report[0].uncertainty == 1.0 - expected_c


def test_quantify_ignores_other_class_masks(cam64):
    mesh, pose, mask = scene_fixture(cam64)
    report = quantify_scene(
        [PoseEstimate(pose, "box")],
        [Segmentation(mask, "other")],
        {"box": mesh, "other": mesh},
        cam64,
    )
    assert report[0].unmatched
    assert report[0].certainty == 0.0
    assert report[0].uncertainty == 1.0


def test_quantify_empty_render_is_unmatched(cam64):
    mesh, pose, mask = scene_fixture(cam64)
    behind = Pose.from_rt(np.eye(3), [0.0, 0.0, -1.0])
    report = quantify_scene(
        [PoseEstimate(behind, "box")],
        [Segmentation(mask, "box")],
        {"box": mesh},
        cam64,
    )
    assert report[0].unmatched
    assert report[0].uncertainty == 1.0
    assert report[0].visibility == 0.0


def test_quantify_low_visibility_discounts(cam64):
    mesh, _, _ = scene_fixture(cam64)
    # mostly outside the window: silhouette IOU can be high while the
    # visible fraction is low, and the uncertainty must reflect both
    off = Pose.from_rt(np.eye(3), [0.23, 0.0, 0.5])
    res = DepthRenderer(pad_factor=3).render(off, mesh, cam64)
    mask = mask_from_depth(res.depth)
    assert mask.any()
    report = quantify_scene(
        [PoseEstimate(off, "box")],
        [Segmentation(mask, "box")],
        {"box": mesh},
        cam64,
    )
    a = report[0]
    assert a.certainty == 1.0
    assert a.visibility == res.visibility < 0.8
    assert a.uncertainty == 1.0 - a.visibility


def test_quantify_two_objects_greedy_assignment(cam64):
    mesh = box_mesh(0.06)
    left = Pose.from_rt(np.eye(3), [-0.08, 0.0, 0.5])
    right = Pose.from_rt(np.eye(3), [0.08, 0.0, 0.5])
    r = DepthRenderer(pad_factor=3)
    mask_left = mask_from_depth(r.render(left, mesh, cam64).depth)
    mask_right = mask_from_depth(r.render(right, mesh, cam64).depth)
    report = quantify_scene(
        [PoseEstimate(left, "box"), PoseEstimate(right, "box")],
        [Segmentation(mask_right, "box"), Segmentation(mask_left, "box")],
        {"box": mesh},
        cam64,
    )
    assert report[0].matched_segmentation == 1
    assert report[1].matched_segmentation == 0
    assert report[0].certainty == 1.0 and report[1].certainty == 1.0


def test_quantify_two_stage_uses_instance_ids(cam64):
    mesh = box_mesh(0.06)
    left = Pose.from_rt(np.eye(3), [-0.08, 0.0, 0.5])
    right = Pose.from_rt(np.eye(3), [0.08, 0.0, 0.5])
    r = DepthRenderer(pad_factor=3)
    mask_left = mask_from_depth(r.render(left, mesh, cam64).depth)
    mask_right = mask_from_depth(r.render(right, mesh, cam64).depth)
    cfg = MaskValConfig(association_mode="two_stage")
    # ids deliberately pair each pose with the wrong-side mask
    report = quantify_scene(
        [PoseEstimate(left, "box", 1), PoseEstimate(right, "box", 2)],
        [Segmentation(mask_right, "box", 1), Segmentation(mask_left, "box", 2)],
        {"box": mesh},
        cam64,
        cfg,
    )
    assert report[0].matched_segmentation == 0
    assert report[0].certainty == mask_iou(mask_left, mask_right)
    assert report[0].certainty < 0.1  # disjoint silhouettes, no floor applied
    assert report[0].uncertainty == 1.0 - report[0].certainty


def test_quantify_two_stage_positional_needs_equal_counts(cam64):
    mesh, pose, mask = scene_fixture(cam64)
    cfg = MaskValConfig(association_mode="two_stage")
    with pytest.raises(ValueError, match="equal counts"):
        quantify_scene(
            [PoseEstimate(pose, "box"), PoseEstimate(pose, "box")],
            [Segmentation(mask, "box")],
            {"box": mesh},
            cam64,
            cfg,
        )


def test_quantify_validates_inputs(cam64):
    mesh, pose, mask = scene_fixture(cam64)
    with pytest.raises(ValueError, match="no object model"):
        quantify_scene([PoseEstimate(pose, "mug")], [], {"box": mesh}, cam64)
    with pytest.raises(ValueError, match="shape"):
        quantify_scene(
            [PoseEstimate(pose, "box")],
            [Segmentation(np.zeros((8, 8), bool), "box")],
            {"box": mesh},
            cam64,
        )


def test_maskval_config_validation():
    with pytest.raises(ValueError):
        MaskValConfig(alpha=1.5)
    with pytest.raises(ValueError):
        MaskValConfig(association_mode="hungarian")
    with pytest.raises(ValueError):
        MaskValConfig(min_match_iou=-0.2)
