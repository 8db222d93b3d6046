import numpy as np
import pytest

from splatad.errors import EmptyTrainingSet
from splatad.loss import psnr
from splatad.pipeline import pose_errors_vs_camera
from splatad.pose import (
    NccMatcher,
    PoseConfig,
    coarse_pose,
    coarse_pose_index,
    effective_pose_matrix,
    refine_pose,
    render_aligned,
)
from splatad.render import RenderConfig, render
from splatad.scene import Camera
from splatad.se3 import ScrewTransform, rodrigues
from splatad.synth import SynthConfig, generate_scene, scene_as_dataset

RCFG_KW = dict(footprint_sigma=4.0)


@pytest.fixture(scope="module")
def world():
    scfg = SynthConfig(
        seed=17, image_size=64, n_train_views=24, n_test_normal=2,
        n_test_anomalous=0, n_primitives=5, splats_per_primitive=12,
    )
    scene = generate_scene(scfg)
    ds = scene_as_dataset(scene)
    rcfg = RenderConfig(background=ds.background, **RCFG_KW)
    return scene, ds, rcfg


def orbital_perturbation(cam: Camera, rng, angle: float, translation: float) -> Camera:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    Q = rodrigues(axis, angle)
    delta = rng.normal(size=3)
    delta = delta / np.linalg.norm(delta) * translation
    C2 = Q @ cam.center + delta
    R2 = cam.rotation @ Q.T
    return Camera(
        width=cam.width, height=cam.height, fx=cam.fx, fy=cam.fy, cx=cam.cx,
        cy=cam.cy, rotation=R2, translation=-R2 @ C2, near=cam.near, far=cam.far,
    )


class TestCoarsePose:
    def test_self_match(self, world):
        _, ds, _ = world
        idx = coarse_pose_index(ds.train[7][0], ds.train)
        assert idx == 7
        cam = coarse_pose(ds.train[7][0], ds.train)
        assert cam is ds.train[7][1]

    def test_noisy_match(self, world):
        _, ds, _ = world
        rng = np.random.default_rng(0)
        noisy = np.clip(ds.train[7][0] + rng.normal(size=ds.train[7][0].shape) * 0.05, 0, 1)
        assert coarse_pose_index(noisy, ds.train) == 7

    def test_tie_breaks_to_lower_index(self, world):
        _, ds, _ = world
        img = ds.train[3][0]
        duplicated = [(img, ds.train[3][1]), (img.copy(), ds.train[3][1])]
        assert coarse_pose_index(img, duplicated) == 0

    def test_empty_training_set(self):
        with pytest.raises(EmptyTrainingSet):
            coarse_pose(np.zeros((8, 8, 3)), [])

    def test_matcher_cache_consistent(self, world):
        _, ds, _ = world
        m = NccMatcher()
        imgs = [i for i, _ in ds.train]
        first = m.scores(ds.train[2][0], imgs)
        second = m.scores(ds.train[2][0], imgs)  # cached path
        assert np.array_equal(first, second)


class TestRefinePose:
    def test_k_zero_returns_coarse_identity(self, world):
        scene, ds, rcfg = world
        est = refine_pose(ds.test[0].image, ds.train[0][1], scene.cloud_gt, k=0,
                          render_cfg=rcfg)
        assert est.steps == 0 and est.loss_trace == []
        assert np.array_equal(
            est.effective_pose, ds.train[0][1].world_to_camera_matrix()
            @ np.eye(4)
        )
        from splatad.se3 import to_matrix

        assert np.array_equal(to_matrix(est.transform), np.eye(4))

    def test_query_at_coarse_pose_stays_put(self, world):
        scene, ds, rcfg = world
        cam = ds.train[1][1]
        query = render(scene.cloud_gt, cam, rcfg)
        est = refine_pose(query, cam, scene.cloud_gt, k=40, render_cfg=rcfg)
        assert est.loss_trace[-1] <= est.loss_trace[0] + 1e-15
        R = scene.cloud_gt.scene_radius
        rotvec = est.transform.theta * est.transform.omega
        assert np.linalg.norm(rotvec) < 1e-3 * R
        assert np.linalg.norm(est.transform.translation()) < 1e-3 * R

    def test_recovers_orbital_perturbation(self, world):
        scene, ds, rcfg = world
        rng = np.random.default_rng(42)
        R = scene.cloud_gt.scene_radius
        ok = 0
        for trial in range(3):
            true_cam = ds.test[0].camera if trial == 0 else ds.train[trial][1]
            coarse = orbital_perturbation(true_cam, rng, np.deg2rad(10.0), 0.05 * R)
            query = render(scene.cloud_gt, true_cam, rcfg)
            est = refine_pose(query, coarse, scene.cloud_gt, k=175, render_cfg=rcfg)
            rot, tr = pose_errors_vs_camera(est.effective_pose, true_cam)
            if rot < 0.01 and tr < 0.01 * R:
                ok += 1
            assert all(np.isfinite(v) for v in est.loss_trace)
            assert est.loss_trace[-1] <= est.loss_trace[0]
        assert ok >= 2

    def test_resumable(self, world):
        scene, ds, rcfg = world
        coarse = ds.train[2][1]
        query = ds.test[0].image
        full = refine_pose(query, coarse, scene.cloud_gt, k=30, render_cfg=rcfg)
        half = refine_pose(query, coarse, scene.cloud_gt, k=15, render_cfg=rcfg)
        resumed = refine_pose(query, coarse, scene.cloud_gt, k=15, render_cfg=rcfg,
                              resume=half)
        assert resumed.steps == full.steps == 30
        assert np.array_equal(resumed.transform.as_vector(), full.transform.as_vector())
        assert resumed.loss_trace == full.loss_trace

    def test_does_not_mutate_cloud(self, world):
        scene, ds, rcfg = world
        before = scene.cloud_gt.means.copy()
        refine_pose(ds.test[0].image, ds.train[0][1], scene.cloud_gt, k=5, render_cfg=rcfg)
        assert np.array_equal(scene.cloud_gt.means, before)

    def test_loss_trace_length_equals_steps(self, world):
        scene, ds, rcfg = world
        est = refine_pose(ds.test[0].image, ds.train[0][1], scene.cloud_gt, k=12,
                          render_cfg=rcfg)
        assert len(est.loss_trace) == est.steps == 12

    def test_early_stop_plateau(self, world):
        scene, ds, rcfg = world
        cam = ds.train[1][1]
        query = render(scene.cloud_gt, cam, rcfg)  # already aligned: flat loss
        cfg = PoseConfig(early_stop=True, early_stop_window=5)
        est = refine_pose(query, cam, scene.cloud_gt, k=100, pose_cfg=cfg,
                          render_cfg=rcfg)
        assert est.steps < 100


class TestRenderAligned:
    def test_identity_matches_plain_render(self, world):
        scene, ds, rcfg = world
        cam = ds.train[0][1]
        est = refine_pose(ds.test[0].image, cam, scene.cloud_gt, k=0, render_cfg=rcfg)
        diff = render_aligned(est, scene.cloud_gt, rcfg) - render(scene.cloud_gt, cam, rcfg)
        assert np.abs(diff).max() < 1e-12  # quaternion renormalization noise only

    def test_refined_beats_wrong_transform(self, world):
        scene, ds, rcfg = world
        rng = np.random.default_rng(3)
        true_cam = ds.train[4][1]
        coarse = orbital_perturbation(true_cam, rng, np.deg2rad(8.0), 0.03)
        query = render(scene.cloud_gt, true_cam, rcfg)
        est = refine_pose(query, coarse, scene.cloud_gt, k=120, render_cfg=rcfg)
        aligned = render_aligned(est, scene.cloud_gt, rcfg)
        good = psnr(aligned, query)
        assert good >= 25.0

        axis = rng.normal(size=3)
        wrong = est
        wrong = type(est)(
            camera=est.camera,
            transform=ScrewTransform(axis / np.linalg.norm(axis), np.zeros(3), np.pi / 2),
            effective_pose=est.effective_pose,
            loss_trace=est.loss_trace,
            steps=est.steps,
        )
        bad = psnr(render_aligned(wrong, scene.cloud_gt, rcfg), query)
        assert bad < good


def test_effective_pose_composition(world):
    scene, ds, rcfg = world
    cam = ds.train[0][1]
    t = ScrewTransform(np.array([0.1, -0.2, 0.3]), np.array([0.05, 0.0, -0.1]), 0.7)
    from splatad.se3 import apply_to_cloud, to_matrix

    eff = effective_pose_matrix(cam, t)
    # rendering the moved cloud from cam == rendering the original cloud from eff
    moved = apply_to_cloud(t, scene.cloud_gt)
    img_a = render(moved, cam, rcfg)
    eff_cam = Camera(
        width=cam.width, height=cam.height, fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
        rotation=eff[:3, :3], translation=eff[:3, 3], near=cam.near, far=cam.far,
    )
    img_b = render(scene.cloud_gt, eff_cam, rcfg)
    assert np.abs(img_a - img_b).max() < 1e-6
