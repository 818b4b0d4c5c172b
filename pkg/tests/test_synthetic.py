import numpy as np
import pytest

from conftest import random_rotation
from acf.camera import backproject
from acf.core import ObjectClass, PartClass, parts_of
from acf.errors import InvalidSpec
from acf.synthetic import (
    CameraSpec,
    NoiseModel,
    ObjectSpec,
    SceneSpec,
    _hit_torus_arc,
    brute_force_kde_argmax,
    emulate_predictions,
    generate_scene,
    object_parts,
    random_scene_spec,
    scatter_targets,
    yaw,
)

O = ObjectClass


def mug_scene(rotation=np.eye(3), translation=(0.0, 0.0, 0.0)):
    return generate_scene(SceneSpec((ObjectSpec(O.MUG, rotation, np.asarray(translation, float)),)))


def world_parts(scene):
    T = scene.world_from_camera()
    return [p.acf.transformed(T[:3, :3], T[:3, 3]) for p in scene.parts]


def test_upright_mug_container_axis_is_world_up():
    scene = mug_scene()
    cont = world_parts(scene)[0]
    assert scene.parts[0].part_class is PartClass.CONTAINER
    np.testing.assert_allclose(cont.axis, [0, 0, 1], atol=1e-12)


def test_rotated_mug_rotates_all_frames():
    R = yaw(0.7)
    a, b = world_parts(mug_scene()), world_parts(mug_scene(R))
    for x, y in zip(a, b):
        np.testing.assert_allclose(R @ x.axis, y.axis, atol=1e-12)
        np.testing.assert_allclose(R @ x.keypoint, y.keypoint, atol=1e-12)


def test_handle_axis_points_at_container():
    for seed in range(20):
        scene = generate_scene(random_scene_spec(seed, 3, [O.MUG], area=(0.3, 0.2)))
        by_obj = {}
        for p in scene.parts:
            by_obj.setdefault(p.object_index, {})[p.part_class] = p
        for d in by_obj.values():
            h, c = d[PartClass.HANDLE], d[PartClass.CONTAINER]
            assert h.acf.axis @ (c.acf.keypoint - h.acf.keypoint) > 0
            # the outer tangent point is the one farther from the container axis
            rel = h.acf.keypoint - c.acf.keypoint
            inner = c.acf.keypoint + rel - 2 * (rel - (rel @ c.acf.axis) * c.acf.axis)
            assert np.linalg.norm(rel - (rel @ c.acf.axis) * c.acf.axis) > 0


def test_generated_scenes_satisfy_core_invariants():
    for seed in range(10):
        scene = generate_scene(random_scene_spec(seed))
        for p in scene.parts:
            assert abs(np.linalg.norm(p.acf.axis) - 1) < 1e-9
        by_obj = {}
        for p in scene.parts:
            by_obj.setdefault(p.object_index, set()).add(p.part_class)
        for oi, parts in by_obj.items():
            assert parts == set(parts_of(scene.spec.objects[oi].object_class))


def test_depth_matches_table_and_cap_oracles():
    scene = generate_scene(SceneSpec((ObjectSpec(O.BOTTLE),)))
    K = scene.intrinsics
    T = scene.world_from_camera()
    labels = scene.labels
    h = 0.20
    for (r, c) in [(5, 5), (230, 310), (5, 310)]:
        assert labels[r, c] == -1
        p = T[:3, :3] @ backproject([c, r], scene.depth.values[r, c], K) + T[:3, 3]
        assert abs(p[2]) < 1e-9
    # pixels on the bottle that land on its top cap
    rows, cols = np.nonzero(labels == 0)
    pts = np.array([T[:3, :3] @ backproject([c, r], scene.depth.values[r, c], K) + T[:3, 3]
                    for r, c in zip(rows, cols)])
    on_side = np.abs(np.hypot(pts[:, 0], pts[:, 1]) - 0.035) < 1e-9
    on_cap = np.abs(pts[:, 2] - h) < 1e-9
    assert np.all(on_side | on_cap) and on_cap.any() and on_side.any()


def test_torus_hits_lie_on_the_surface(rng):
    c, R, tube = np.array([0.04, 0.0, 0.045]), 0.025, 0.007
    o = np.tile([0.3, -0.4, 0.3], (500, 1))
    tgt = c + rng.uniform(-0.035, 0.035, (500, 3))
    d = tgt - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t = _hit_torus_arc(o, d, c, R, tube)
    hit = np.isfinite(t)
    assert hit.sum() > 50
    p = o[hit] + t[hit, None] * d[hit] - c
    # torus in the x-z plane around the y axis: (sqrt(x^2 + z^2) - R)^2 + y^2 = tube^2
    resid = (np.hypot(p[:, 0], p[:, 2]) - R) ** 2 + p[:, 1] ** 2 - tube**2
    assert np.max(np.abs(resid)) < 1e-12
    assert np.all(p[:, 0] >= -1e-12)  # only the outer half is part of the handle


def test_invalid_specs():
    bad = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(InvalidSpec):
        validate(SceneSpec((ObjectSpec(O.MUG, bad),)))
    with pytest.raises(InvalidSpec):
        validate(SceneSpec((ObjectSpec(O.BOTTLE, dims={"radius": -0.01}),)))
    with pytest.raises(InvalidSpec):
        validate(SceneSpec((), gravity=np.array([0, 0, -2.0])))
    with pytest.raises(InvalidSpec):
        validate(SceneSpec((), camera=CameraSpec(extrinsic=np.diag([1.0, 1, -1, 1]))))


def validate(spec):
    generate_scene(spec)


@pytest.fixture(scope="module")
def busy_scene():
    return generate_scene(random_scene_spec(3, 4))


def test_zero_noise_reproduces_truth(busy_scene):
    b = emulate_predictions(busy_scene, NoiseModel(), 0)
    assert b.rois
    for r in b.rois:
        v = r.seeds.valid
        np.testing.assert_allclose((r.seeds.points + r.keypoint_offsets)[v],
                                   np.tile(r.truth.acf.keypoint, (v.sum(), 1)), atol=1e-12)
        np.testing.assert_allclose((r.seeds.points[:, None] + r.endpoint_offsets)[v],
                                   np.tile(r.truth.endpoints, (v.sum(), 1, 1)), atol=1e-12)
        np.testing.assert_allclose(r.vectors, np.tile(r.truth.acf.axis, (len(v), 1)), atol=1e-15)
        np.testing.assert_array_equal(r.mask, r.gt_mask)


def test_offset_noise_moments(busy_scene):
    sigma = 0.004
    devs = []
    seed = 0
    while sum(len(d) for d in devs) < 10_000:
        b0 = emulate_predictions(busy_scene, NoiseModel(), seed)
        b1 = emulate_predictions(busy_scene, NoiseModel(offset_sigma=sigma), seed)
        for r0, r1 in zip(b0.rois, b1.rois):
            v = r0.seeds.valid
            devs.append((r1.keypoint_offsets - r0.keypoint_offsets)[v].ravel())
        seed += 1
    d = np.concatenate(devs)
    assert abs(d.std() / sigma - 1) < 0.05
    assert abs(d.mean()) < 0.05 * sigma


def test_outlier_count(busy_scene):
    b0 = emulate_predictions(busy_scene, NoiseModel(), 5)
    b1 = emulate_predictions(busy_scene, NoiseModel(outlier_fraction=0.3), 5)
    flags = []
    for r0, r1 in zip(b0.rois, b1.rois):
        v = r0.seeds.valid
        flags.append(np.any(r1.keypoint_offsets != r0.keypoint_offsets, axis=1)[v])
    f = np.concatenate(flags)[:1000]
    assert len(f) == 1000
    # binomial(1000, 0.3): sd ~ 14.5, allow four sd
    assert abs(f.sum() - 300) < 4 * np.sqrt(1000 * 0.3 * 0.7)


def test_paf_noise_and_mask_flips(busy_scene):
    b = emulate_predictions(busy_scene, NoiseModel(paf_angle_sigma=10.0, mask_flip_prob=0.1), 2)
    flips = np.concatenate([r.mask != r.gt_mask for r in b.rois])
    assert 0.05 < flips.mean() < 0.15
    for r in b.rois:
        if r.paf_vectors is not None:
            np.testing.assert_allclose(np.linalg.norm(r.paf_vectors, axis=1), 1.0)
            ang = np.degrees(np.arccos(np.clip(r.paf_vectors @ r.paf_target, -1, 1)))
            assert ang.mean() < 20


def test_noise_model_ranges():
    with pytest.raises(ValueError):
        NoiseModel(offset_sigma=-1)
    with pytest.raises(ValueError):
        NoiseModel(outlier_fraction=1.5)


def test_emulation_is_deterministic(busy_scene):
    a = emulate_predictions(busy_scene, NoiseModel(0.003, 0.2, 0.5, 5.0, 0.05), 9)
    b = emulate_predictions(busy_scene, NoiseModel(0.003, 0.2, 0.5, 5.0, 0.05), 9)
    for x, y in zip(a.rois, b.rois):
        np.testing.assert_array_equal(x.keypoint_offsets, y.keypoint_offsets)
        np.testing.assert_array_equal(x.label_logits, y.label_logits)


def test_scatter_targets_labels():
    feet, lab = scatter_targets(np.array([[0.1, 1, 0], [0.9, -1, 0.5]]), np.array([[0, 0, 0], [1.0, 0, 0]]))
    np.testing.assert_allclose(feet, [[0.1, 0, 0], [0.9, 0, 0]])
    np.testing.assert_array_equal(lab, [0, 1])


def test_kde_oracle_examples(rng):
    v = np.array([[0.1, 0.2, 0.3]])
    assert np.linalg.norm(brute_force_kde_argmax(v, 0.03, 0.002) - v[0]) <= 0.002
    two = np.array([[0, 0, 0], [0.3, 0, 0.0]])
    m = brute_force_kde_argmax(two, 0.03, 0.005)
    assert min(np.linalg.norm(m - two[0]), np.linalg.norm(m - two[1])) <= 0.005


def test_random_layouts_do_not_overlap():
    from acf.synthetic import footprint_radius
    for seed in range(20):
        spec = random_scene_spec(seed, (2, 4))
        objs = spec.objects
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                dist = np.linalg.norm(objs[i].translation[:2] - objs[j].translation[:2])
                assert dist >= footprint_radius(objs[i].object_class, objs[i].dims) + \
                    footprint_radius(objs[j].object_class, objs[j].dims)


def test_rigid_parts_follow_object_pose(rng):
    R = random_rotation(rng)
    for obj in O:
        for p in object_parts(obj):
            assert abs(np.linalg.norm(p.axis) - 1) < 1e-12
            e = p.endpoints
            np.testing.assert_allclose((e[1] - e[0]) / np.linalg.norm(e[1] - e[0]), p.axis, atol=1e-12)
