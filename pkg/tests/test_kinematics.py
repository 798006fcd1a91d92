from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltagrasp.kinematics import (
    DeltaGeometry,
    EmptyWorkspace,
    Unreachable,
    forward_kinematics,
    ik_batch,
    inverse_kinematics,
    is_reachable,
    largest_inscribed_cube,
    read_dataset_csv,
    sample_workspace_dataset,
    symmetric_depth,
    workspace_volume_monte_carlo,
    write_dataset_csv,
)

angle = st.floats(0.0, 90.0, allow_nan=False)


def test_geometry_validation():
    with pytest.raises(ValueError):
        DeltaGeometry(upper_arm=0.0)
    with pytest.raises(ValueError):
        DeltaGeometry(lower_arm=0.03)
    with pytest.raises(ValueError):
        DeltaGeometry(theta_min=10.0, theta_max=5.0)
    g = DeltaGeometry()
    assert DeltaGeometry.from_dict(g.to_dict()) == g


def test_zero_angles_closed_form(geom):
    p = forward_kinematics(geom, [0.0, 0.0, 0.0])
    z = -geom.upper_arm - np.sqrt(geom.lower_arm**2 - (geom.base_radius - geom.effector_radius) ** 2)
    np.testing.assert_allclose(p, [0.0, 0.0, z], atol=1e-12)


def test_symmetric_depth_matches_fk(geom):
    for a in np.arange(0.0, 90.01, 15.0):
        p = forward_kinematics(geom, [a, a, a])
        assert abs(p[0]) < 1e-10 and abs(p[1]) < 1e-10
        assert abs(p[2] - symmetric_depth(geom, a)) <= 1e-10


@settings(max_examples=200, deadline=None)
@given(st.tuples(angle, angle, angle))
def test_round_trip_property(geom, theta):
    p = forward_kinematics(geom, np.array(theta))
    back = inverse_kinematics(geom, p)
    assert np.max(np.abs(back - np.array(theta))) <= 1e-8


def test_fk_point_lies_on_all_spheres(geom):
    from deltagrasp.kinematics import sphere_centers

    th = np.random.default_rng(1).uniform(0, 90, size=(500, 3))
    p = forward_kinematics(geom, th)
    c = sphere_centers(geom, th)
    dist = np.linalg.norm(p[:, None, :] - c, axis=-1)
    assert np.max(np.abs(dist - geom.lower_arm)) <= 1e-10


def test_ik_reproduces_point(geom):
    th = np.random.default_rng(2).uniform(0, 90, size=(1000, 3))
    p = forward_kinematics(geom, th)
    theta, ok = ik_batch(geom, p)
    assert ok.all()
    assert np.max(np.abs(forward_kinematics(geom, theta) - p)) <= 1e-9


def test_symmetric_point_inverts_to_equal_angles(geom):
    p = np.array([0.0, 0.0, symmetric_depth(geom, 30.0)])
    np.testing.assert_allclose(inverse_kinematics(geom, p), [30.0, 30.0, 30.0], atol=1e-8)


def test_far_point_unreachable(geom):
    with pytest.raises(Unreachable):
        inverse_kinematics(geom, [10.0, 10.0, 10.0])
    assert not is_reachable(geom, [10.0, 10.0, 10.0])


def test_boundary_point_counts_as_reachable(geom):
    p = forward_kinematics(geom, [0.0, 90.0, 37.0])
    assert is_reachable(geom, p)


def test_bounds_top_face_and_corner_unreachable(geom):
    lo, hi = geom.bounds_lo, geom.bounds_hi
    top_mid = np.array([(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[2]])
    assert not is_reachable(geom, top_mid)
    assert not is_reachable(geom, lo)


def test_bounds_faces_all_unreachable(geom):
    rng = np.random.default_rng(4)
    lo, hi = geom.bounds_lo, geom.bounds_hi
    for axis in range(3):
        for value in (lo[axis], hi[axis]):
            pts = rng.uniform(lo, hi, size=(5000, 3))
            pts[:, axis] = value
            assert not ik_batch(geom, pts)[1].any()


def _rot120(p):
    c, s = np.cos(2 * np.pi / 3), np.sin(2 * np.pi / 3)
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return p @ r.T


def test_threefold_symmetry(geom):
    th = np.random.default_rng(5).uniform(0, 90, size=(200, 3))
    p = forward_kinematics(geom, th)
    # chain k+1 sits 120 deg after chain k: rotating the point shifts angles forward
    q = forward_kinematics(geom, th[:, [2, 0, 1]])
    assert np.max(np.abs(_rot120(p) - q)) <= 1e-10


def test_membership_invariant_under_rotation(geom):
    pts = np.random.default_rng(6).uniform(geom.bounds_lo, geom.bounds_hi, size=(20000, 3))
    a = ik_batch(geom, pts)[1]
    b = ik_batch(geom, _rot120(pts))[1]
    # only points within rounding of the boundary may disagree
    assert np.mean(a != b) < 1e-4


def test_volume_monte_carlo(geom):
    v1, se1 = workspace_volume_monte_carlo(geom, 100_000, seed=0)
    v1b, _ = workspace_volume_monte_carlo(geom, 100_000, seed=0)
    v2, se2 = workspace_volume_monte_carlo(geom, 200_000, seed=1)
    assert v1 == v1b
    assert se1 > 0 and abs(v1 - v2) < 3 * np.hypot(se1, se2)
    with pytest.raises(ValueError):
        workspace_volume_monte_carlo(geom, 1000)


def test_inscribed_cube(geom, cube):
    assert cube.side > 0
    assert is_reachable(geom, np.asarray(cube.center))
    assert ik_batch(geom, cube.corners())[1].all()
    # interior grid points are reachable too
    g = np.linspace(0, 1, 7)
    pts = cube.lo + cube.side * np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    assert ik_batch(geom, pts)[1].all()
    v, _ = workspace_volume_monte_carlo(geom, 200_000, seed=0)
    assert cube.volume_cm3 < v
    with pytest.raises(ValueError):
        largest_inscribed_cube(geom, 0.005)


def test_empty_workspace_raises():
    g = DeltaGeometry(sample_bounds=((0.5, 0.5, 0.5), (0.6, 0.6, 0.6)))
    with pytest.raises(EmptyWorkspace):
        largest_inscribed_cube(g)


def test_dataset_labels_and_csv(geom, tmp_path):
    pts, labels = sample_workspace_dataset(geom, 20000, seed=7)
    pts2, labels2 = sample_workspace_dataset(geom, 20000, seed=7)
    assert np.array_equal(pts, pts2) and np.array_equal(labels, labels2)
    assert 0.05 < labels.mean() < 0.95
    fk_pts = forward_kinematics(geom, np.random.default_rng(0).uniform(0, 90, size=(100, 3)))
    assert ik_batch(geom, fk_pts)[1].all()
    path = tmp_path / "data.csv"
    write_dataset_csv(path, pts[:50], labels[:50])
    assert path.read_text().splitlines()[0] == "x,y,z,label"
    p, lab = read_dataset_csv(path)
    assert np.array_equal(p, pts[:50]) and np.array_equal(lab, labels[:50])
