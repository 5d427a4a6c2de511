import math

import numpy as np
import pytest

from bevkit.anchor_grid import (
    Anchor3D,
    LabelKind,
    apply_axis_aligned_offsets,
    assign_anchor_labels,
    cluster_dimensions,
    compute_axis_aligned_offsets,
    filter_empty_anchors,
    generate_anchor_grid,
    project_anchor_to_bev,
    project_anchor_to_image,
    read_anchors_csv,
    read_clusters_csv,
    write_anchors_csv,
    write_clusters_csv,
)
from bevkit.bev import build_occupancy_integral, footprint_cell_rect, grid_shape
from bevkit.box_codec import OrientedBox3D, corners_bev
from bevkit.errors import ParameterError
from bevkit.kitti_io import LabeledObject, PointCloud, flat_lidar_plane

from conftest import make_cloud
from oracles import cell_rect_count_oracle, rasterized_rect_iou

DEFAULT_EXTENTS = ((0.0, 70.0), (-40.0, 40.0))
FLAT = flat_lidar_plane(1.73)


def _label(class_name, h, w, length):
    return LabeledObject(
        class_name=class_name,
        truncation=0.0,
        occlusion=0,
        alpha=0.0,
        bbox2d=(0.0, 0.0, 50.0, 50.0),
        dims=(h, w, length),
        location=(0.0, 1.0, 10.0),
        rotation_y=0.0,
    )


class TestClusterDimensions:
    def test_k1_constant_data(self):
        labels = [_label("Car", 1.56, 1.6, 3.9)] * 5
        (dims,) = cluster_dimensions(labels, "car", 1)
        assert dims == pytest.approx((3.9, 1.6, 1.56))

    def test_k1_is_mean(self):
        rng = np.random.default_rng(3)
        labels = [
            _label("Car", rng.uniform(1, 2), rng.uniform(1, 2), rng.uniform(3, 5))
            for _ in range(40)
        ]
        (dims,) = cluster_dimensions(labels, "Car", 1)
        data = np.array([(o.dims[2], o.dims[1], o.dims[0]) for o in labels])
        assert np.allclose(dims, data.mean(axis=0), atol=1e-12)

    def test_k2_bimodal_blobs(self):
        rng = np.random.default_rng(5)
        small = [
            _label("Car", 1.5 + rng.normal(0, 1e-4), 1.6 + rng.normal(0, 1e-4),
                   3.9 + rng.normal(0, 1e-4))
            for _ in range(30)
        ]
        large = [
            _label("Car", 3.0 + rng.normal(0, 1e-4), 2.5 + rng.normal(0, 1e-4),
                   10.0 + rng.normal(0, 1e-4))
            for _ in range(30)
        ]
        clusters = cluster_dimensions(small + large, "car", 2)
        small_mean = np.array([(o.dims[2], o.dims[1], o.dims[0]) for o in small]).mean(axis=0)
        large_mean = np.array([(o.dims[2], o.dims[1], o.dims[0]) for o in large]).mean(axis=0)
        assert np.allclose(clusters[0], small_mean, atol=1e-6)
        assert np.allclose(clusters[1], large_mean, atol=1e-6)

    def test_sorted_by_volume(self):
        rng = np.random.default_rng(7)
        labels = [
            _label("Cyclist", rng.uniform(1, 3), rng.uniform(0.4, 1), rng.uniform(1, 2))
            for _ in range(50)
        ]
        clusters = cluster_dimensions(labels, "cyclist", 3)
        volumes = [d[0] * d[1] * d[2] for d in clusters]
        assert volumes == sorted(volumes)

    def test_too_few_samples(self):
        with pytest.raises(ParameterError):
            cluster_dimensions([_label("Car", 1.5, 1.6, 3.9)], "car", 2)

    def test_other_classes_not_counted(self):
        labels = [_label("Car", 1.5, 1.6, 3.9), _label("Pedestrian", 1.7, 0.6, 0.8)]
        (dims,) = cluster_dimensions(labels, "pedestrian", 1)
        assert dims == pytest.approx((0.8, 0.6, 1.7))


class TestGenerateAnchorGrid:
    def test_tiny_grid_count(self):
        anchors = generate_anchor_grid(
            ((0.0, 1.0), (0.0, 1.0)), 0.5, [(0.4, 0.4, 1.0)], flat_lidar_plane(0.0)
        )
        assert len(anchors) == 4  # 2 x 2 positions, square size, one variant
        xs = sorted({a.centroid[0] for a in anchors})
        assert xs == pytest.approx([0.25, 0.75])

    def test_default_car_grid_count(self):
        anchors = generate_anchor_grid(DEFAULT_EXTENTS, 0.5, [(3.9, 1.6, 1.56)], FLAT)
        assert len(anchors) == 140 * 160 * 2

    def test_two_variants_unless_square(self):
        anchors = generate_anchor_grid(
            ((0.0, 1.0), (0.0, 1.0)), 1.0, [(2.0, 1.0, 1.0)], flat_lidar_plane(0.0)
        )
        assert len(anchors) == 2
        assert anchors[0].dims[:2] == (2.0, 1.0)
        assert anchors[1].dims[:2] == (1.0, 2.0)

    def test_bottom_rests_on_plane(self):
        anchors = generate_anchor_grid(
            ((0.0, 4.0), (-2.0, 2.0)), 1.0, [(3.9, 1.6, 1.56)], FLAT
        )
        for a in anchors:
            bottom = a.centroid[2] - a.dims[2] / 2.0
            assert abs(bottom - FLAT.height_at(*a.centroid[:2])) < 1e-6

    def test_bottom_follows_tilted_plane(self):
        from bevkit.kitti_io import GroundPlane

        n = np.array([0.05, -0.02, 1.0])
        n = n / np.linalg.norm(n)
        plane = GroundPlane(n[0], n[1], n[2], 1.2)
        anchors = generate_anchor_grid(
            ((0.0, 10.0), (-5.0, 5.0)), 2.5, [(1.0, 1.0, 1.0)], plane
        )
        for a in anchors:
            bottom = a.centroid[2] - 0.5
            assert abs(bottom - plane.height_at(*a.centroid[:2])) < 1e-6

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            generate_anchor_grid(DEFAULT_EXTENTS, 0.0, [(1, 1, 1)], FLAT)
        with pytest.raises(ParameterError):
            generate_anchor_grid(DEFAULT_EXTENTS, 0.5, [], FLAT)


class TestFilterEmptyAnchors:
    def _grid(self, extents=((0.0, 8.0), (-4.0, 4.0)), stride=1.0):
        return generate_anchor_grid(extents, stride, [(1.5, 0.8, 1.0)], FLAT)

    def test_empty_cloud_drops_all(self):
        extents = ((0.0, 8.0), (-4.0, 4.0))
        integral = build_occupancy_integral(PointCloud(np.zeros((0, 4))), extents, 0.25)
        assert filter_empty_anchors(self._grid(), integral) == []

    def test_fully_occupied_keeps_all(self):
        extents = ((0.0, 8.0), (-4.0, 4.0))
        xs, ys = np.meshgrid(np.arange(0.125, 8, 0.25), np.arange(-3.875, 4, 0.25))
        pts = np.zeros((xs.size, 4), dtype=np.float32)
        pts[:, 0] = xs.ravel()
        pts[:, 1] = ys.ravel()
        integral = build_occupancy_integral(PointCloud(pts), extents, 0.25)
        anchors = self._grid()
        assert filter_empty_anchors(anchors, integral) == anchors

    def test_matches_per_point_cell_oracle(self):
        rng = np.random.default_rng(11)
        extents = ((0.0, 8.0), (-4.0, 4.0))
        resolution = 0.25
        cloud = make_cloud(rng, 60, extents=extents)
        integral = build_occupancy_integral(cloud, extents, resolution)
        anchors = self._grid()
        kept = filter_empty_anchors(anchors, integral)
        n_lat, n_fwd = grid_shape(extents, resolution)
        expected = []
        for a in anchors:
            x0, y0, x1, y1 = a.footprint
            rect = footprint_cell_rect(x0, x1, y0, y1, extents, resolution)
            rect = tuple(int(v) for v in rect)
            count = cell_rect_count_oracle(
                cloud.points[:, :3], extents, resolution,
                (rect[0], rect[1], rect[2], rect[3]), n_lat, n_fwd,
            )
            if count > 0:
                expected.append(a)
        assert kept == expected
        assert 0 < len(kept) < len(anchors)


class TestProjectAnchorToBev:
    def test_full_extent_anchor(self):
        extents = ((0.0, 10.0), (-5.0, 5.0))
        anchor = Anchor3D((5.0, 0.0, 0.0), (10.0, 10.0, 1.0))
        roi = project_anchor_to_bev(anchor, extents)
        assert (roi.x0, roi.y0, roi.x1, roi.y1) == (0.0, 0.0, 1.0, 1.0)
        assert not roi.is_degenerate

    def test_outside_extents_degenerate(self):
        roi = project_anchor_to_bev(
            Anchor3D((100.0, 0.0, 0.0), (1.0, 1.0, 1.0)), ((0.0, 10.0), (-5.0, 5.0))
        )
        assert roi.is_degenerate

    def test_matches_affine_oracle(self):
        rng = np.random.default_rng(13)
        extents = ((0.0, 70.0), (-40.0, 40.0))
        for _ in range(200):
            anchor = Anchor3D(
                (rng.uniform(1, 69), rng.uniform(-39, 39), 0.0),
                tuple(rng.uniform(0.5, 4.0, 3)),
            )
            roi = project_anchor_to_bev(anchor, extents)
            x0, y0, x1, y1 = anchor.footprint
            assert abs(roi.x0 - max(0.0, x0 / 70.0)) < 1e-9
            assert abs(roi.x1 - min(1.0, x1 / 70.0)) < 1e-9
            assert abs(roi.y0 - max(0.0, (y0 + 40.0) / 80.0)) < 1e-9
            assert abs(roi.y1 - min(1.0, (y1 + 40.0) / 80.0)) < 1e-9


class TestProjectAnchorToImage:
    def test_symmetric_box_on_axis(self, synth_calib):
        # centered along the optical axis: the ROI must straddle the center
        anchor = Anchor3D((20.0, 620.0 / 700.0 * 0.0, 0.0), (2.0, 2.0, 2.0))
        anchor = Anchor3D((20.0, 0.0, -0.08 - 180.0 / 700.0 * 0.0), (2.0, 2.0, 2.0))
        roi = project_anchor_to_image(anchor, synth_calib, (1240, 360))
        assert not roi.is_degenerate

    def test_behind_camera_degenerate(self, synth_calib):
        anchor = Anchor3D((-20.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        roi = project_anchor_to_image(anchor, synth_calib, (1240, 360))
        assert roi.is_degenerate
        assert (roi.x0, roi.y0, roi.x1, roi.y1) == (0.0, 0.0, 0.0, 0.0)

    def test_matches_corner_projection_oracle(self, synth_calib):
        from oracles import project_point_chain

        rng = np.random.default_rng(17)
        w, h = 1242, 375
        checked = 0
        for _ in range(100):
            anchor = Anchor3D(
                (rng.uniform(5, 60), rng.uniform(-20, 20), rng.uniform(-2, 1)),
                tuple(rng.uniform(0.5, 4.0, 3)),
            )
            roi = project_anchor_to_image(anchor, synth_calib, (w, h))
            tx, ty, tz = anchor.centroid
            dx, dy, dz = anchor.dims
            us, vs = [], []
            for sx in (-1, 1):
                for sy in (-1, 1):
                    for sz in (-1, 1):
                        u, v, depth = project_point_chain(
                            (tx + sx * dx / 2, ty + sy * dy / 2, tz + sz * dz / 2),
                            synth_calib.p2, synth_calib.r0, synth_calib.tr_velo_to_cam,
                        )
                        if depth > 0:
                            us.append(u)
                            vs.append(v)
            assert us, "fixture anchors should be in front of the camera"
            clamp = lambda v: min(1.0, max(0.0, v))
            assert abs(roi.x0 - clamp(min(us) / w)) < 1e-9
            assert abs(roi.x1 - clamp(max(us) / w)) < 1e-9
            assert abs(roi.y0 - clamp(min(vs) / h)) < 1e-9
            assert abs(roi.y1 - clamp(max(vs) / h)) < 1e-9
            checked += 1
        assert checked == 100


class TestAssignAnchorLabels:
    def test_identical_footprint_is_object(self):
        anchor = Anchor3D((10.0, 0.0, 0.0), (3.9, 1.6, 1.56))
        gt = OrientedBox3D((10.0, 0.0, 0.0), (3.9, 1.6, 1.56), 0.0)
        (label,) = assign_anchor_labels([anchor], [gt], "car")
        assert label.kind is LabelKind.OBJECT
        assert label.gt_index == 0
        assert label.iou == pytest.approx(1.0)

    def test_disjoint_is_background(self):
        anchor = Anchor3D((10.0, 0.0, 0.0), (3.9, 1.6, 1.56))
        gt = OrientedBox3D((50.0, 20.0, 0.0), (3.9, 1.6, 1.56), 0.3)
        (label,) = assign_anchor_labels([anchor], [gt], "car")
        assert label.kind is LabelKind.BACKGROUND

    def test_no_ground_truth_all_background(self):
        anchors = [Anchor3D((10.0, 0.0, 0.0), (1.0, 1.0, 1.0))]
        (label,) = assign_anchor_labels(anchors, [], "car")
        assert label.kind is LabelKind.BACKGROUND

    def test_between_thresholds_is_ignore(self):
        anchor = Anchor3D((0.5, 0.5, 0.0), (1.0, 1.0, 1.0))
        # overlap 0.6 x 1.0 over union 1.4 -> iou = 3/7 in (0.3, 0.5)
        gt = OrientedBox3D((0.9, 0.5, 0.0), (1.0, 1.0, 1.0), 0.0)
        (label,) = assign_anchor_labels([anchor], [gt], "car")
        assert label.kind is LabelKind.IGNORE

    def test_small_class_threshold_045(self):
        anchor = Anchor3D((0.5, 0.5, 0.0), (1.0, 1.0, 1.0))
        # iou ~ 0.471: object for pedestrians, ignore for cars
        gt = OrientedBox3D((0.86, 0.5, 0.0), (1.0, 1.0, 1.0), 0.0)
        (car_label,) = assign_anchor_labels([anchor], [gt], "car")
        (ped_label,) = assign_anchor_labels([anchor], [gt], "pedestrian")
        assert car_label.kind is LabelKind.IGNORE
        assert ped_label.kind is LabelKind.OBJECT

    def test_matches_rasterized_iou_oracle(self):
        # centimeter-aligned geometry makes the 1 cm rasterization exact
        rng = np.random.default_rng(19)

        def cm(v):  # whole centimeters, so box edges sit exactly on the grid
            return round(v, 2)

        def even_cm(v):
            return 2 * round(v / 2, 2)

        gts = []
        for _ in range(5):
            dims = (even_cm(rng.uniform(1.0, 4.0)), even_cm(rng.uniform(1.0, 4.0)), 1.5)
            gts.append(
                OrientedBox3D((cm(rng.uniform(2, 18)), cm(rng.uniform(-8, 8)), 0.0), dims, 0.0)
            )
        anchors = []
        for _ in range(1000):
            dims = (even_cm(rng.uniform(1.0, 4.0)), even_cm(rng.uniform(1.0, 4.0)), 1.5)
            anchors.append(
                Anchor3D((cm(rng.uniform(2, 18)), cm(rng.uniform(-8, 8)), 0.0), dims)
            )
        labels = assign_anchor_labels(anchors, gts, "car")
        for anchor, label in zip(anchors, labels):
            best_iou, best_g = 0.0, None
            for g, gt in enumerate(gts):
                c = corners_bev(gt)
                rect = (c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max())
                iou = rasterized_rect_iou(anchor.footprint, rect, cell=0.01)
                if iou > best_iou:
                    best_iou, best_g = iou, g
            if best_iou < 0.3:
                assert label.kind is LabelKind.BACKGROUND
            elif best_iou >= 0.5:
                assert label.kind is LabelKind.OBJECT
                assert label.gt_index == best_g
            else:
                assert label.kind is LabelKind.IGNORE
            assert label.iou == pytest.approx(best_iou, abs=1e-9)

    def test_rotated_gt_uses_bounding_rect(self):
        anchor = Anchor3D((0.0, 0.0, 0.0), (2.0, 2.0, 1.0))
        gt = OrientedBox3D((0.0, 0.0, 0.0), (2.0, 2.0, 1.0), math.pi / 4)
        (label,) = assign_anchor_labels([anchor], [gt], "car")
        # bounding rect of the rotated square is 2*sqrt(2) wide
        expected = 4.0 / (8.0)
        assert label.iou == pytest.approx(expected, abs=1e-9)
        (rot_label,) = assign_anchor_labels([anchor], [gt], "car", use_rotated_iou=True)
        assert rot_label.iou == pytest.approx(2 * (math.sqrt(2) - 1) / (2 - 2 * (math.sqrt(2) - 1)), abs=1e-9)


class TestOffsets:
    def test_zero_offsets(self):
        a = Anchor3D((1, 2, 3), (4, 5, 6))
        assert np.array_equal(compute_axis_aligned_offsets(a, a), np.zeros(6))

    def test_pure_x_shift(self):
        a = Anchor3D((1, 2, 3), (4, 5, 6))
        g = Anchor3D((2, 2, 3), (4, 5, 6))
        assert compute_axis_aligned_offsets(a, g).tolist() == [1, 0, 0, 0, 0, 0]

    def test_round_trip_within_one_ulp(self):
        # a + (g - a) can land one ulp off g in IEEE arithmetic
        rng = np.random.default_rng(23)
        for _ in range(200):
            a = Anchor3D(tuple(rng.uniform(-10, 10, 3)), tuple(rng.uniform(0.5, 5, 3)))
            g = Anchor3D(tuple(rng.uniform(-10, 10, 3)), tuple(rng.uniform(0.5, 5, 3)))
            back = apply_axis_aligned_offsets(a, compute_axis_aligned_offsets(a, g))
            for ours, ref, base in zip(
                back.centroid + back.dims, g.centroid + g.dims, a.centroid + a.dims
            ):
                assert abs(ours - ref) <= 2 * np.spacing(max(abs(ref), abs(base)))

    def test_round_trip_exact_on_representable_values(self):
        a = Anchor3D((1.0, 2.5, -3.25), (4.0, 5.5, 6.0))
        g = Anchor3D((2.25, -1.5, 0.75), (1.5, 2.0, 3.5))
        back = apply_axis_aligned_offsets(a, compute_axis_aligned_offsets(a, g))
        assert back.centroid == g.centroid
        assert back.dims == g.dims

    def test_bad_offset_shape(self):
        with pytest.raises(ParameterError):
            apply_axis_aligned_offsets(Anchor3D((0, 0, 0), (1, 1, 1)), np.zeros(5))


class TestCsvRoundTrips:
    def test_anchor_csv(self, tmp_path):
        rng = np.random.default_rng(29)
        anchors = [
            Anchor3D(tuple(rng.uniform(-10, 10, 3)), tuple(rng.uniform(0.5, 5, 3)))
            for _ in range(30)
        ]
        path = tmp_path / "anchors.csv"
        write_anchors_csv(path, anchors)
        assert read_anchors_csv(path) == anchors

    def test_cluster_csv(self, tmp_path):
        clusters = {
            "car": [(3.9, 1.6, 1.56), (4.5, 1.8, 1.7)],
            "pedestrian": [(0.8, 0.6, 1.73)],
        }
        path = tmp_path / "clusters.csv"
        write_clusters_csv(path, clusters)
        assert read_clusters_csv(path) == clusters
