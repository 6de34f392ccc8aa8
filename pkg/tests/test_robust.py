import numpy as np
import pytest

import oracles
from radipose import bench, robust
from radipose.bench import ScenarioSpec, generate_pair, rotation_error, translation_error
from radipose.errors import NoModelFound, NotEnoughCorrespondences
from radipose.geometry import CameraModel, DivisionModel, ImageDims, RelativePose, model_from_pose
from radipose.robust import (
    BLOCKS,
    PriorInjection,
    RansacConfig,
    SamplingStrategy,
    TruncatedScore,
    ransac_estimate,
    score_model,
)

DIMS = ImageDims(1600, 1200)


def fixed_lambda_pair(monkeypatch, lam, seed, noise_px=0.0, outliers=0.0, n=500, shared=True):
    monkeypatch.setattr(bench, "sample_lambda", lambda kind, rng, size=None: lam)
    spec = ScenarioSpec("C", shared, 1, n, noise_px, outliers, seed)
    return generate_pair(spec, np.random.default_rng(seed))


def pose_error(gt, model):
    return max(rotation_error(gt.pose.rotation, model.pose.rotation),
               translation_error(gt.pose.translation, model.pose.translation))


def model_with(gt, **kw):
    lam1 = kw.get("lam1", gt.cam1.lam)
    lam2 = kw.get("lam2", gt.cam2.lam)
    return model_from_pose(gt.pose, CameraModel(gt.cam1.focal, DivisionModel(lam1)),
                           CameraModel(gt.cam2.focal, DivisionModel(lam2)))


class TestScoring:
    def test_threshold_conversion(self):
        assert TruncatedScore.from_pixels(3.0, ImageDims(1600, 1200)).threshold_sq == pytest.approx((3 / 1600) ** 2)

    def test_exact_inliers(self, monkeypatch):
        c, gt, d1, _ = fixed_lambda_pair(monkeypatch, -0.9, 0, n=100)
        s = TruncatedScore.from_pixels(3.0, d1)
        score, mask = score_model(gt.model, c, s)
        assert score == pytest.approx(100 * s.threshold_sq, rel=1e-9)
        assert mask.all()

    def test_all_outside_threshold(self, monkeypatch):
        c, gt, d1, _ = fixed_lambda_pair(monkeypatch, -0.9, 1, n=100)
        s = TruncatedScore(1e-30)
        score, mask = score_model(gt.model, c + 0.05, s)
        assert score == 0.0 and not mask.any()

    def test_inlier_ratio_recovered(self, monkeypatch):
        c, gt, *_ = fixed_lambda_pair(monkeypatch, -0.9, 2, noise_px=1.6, outliers=0.3)
        _, mask = score_model(gt.model, c, TruncatedScore.from_pixels(3.0, DIMS))
        assert abs(mask.mean() - 0.7) < 0.05

    def test_compiled_errors_match_reference(self):
        from radipose.geometry import tangent_sampson_errors

        rng = np.random.default_rng(3)
        F = rng.normal(size=(3, 3))
        c = rng.uniform(-0.6, 0.6, (200, 4))
        assert np.allclose(robust.model_errors(F, -0.8, 0.2, c), tangent_sampson_errors(F, -0.8, 0.2, c),
                           rtol=1e-12)


class TestStrategies:
    def test_pairs_shared(self):
        s = SamplingStrategy.same([0, -0.6, -1.2], shared=True)
        assert s.pairs() == [(0, 0), (-0.6, -0.6), (-1.2, -1.2)]

    def test_pairs_all_combinations(self):
        assert len(SamplingStrategy.same([0, -0.6, -1.2]).pairs()) == 9

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            SamplingStrategy.same([-2.5])

    def test_prior_validation(self):
        with pytest.raises(ValueError):
            PriorInjection(lambda1=1.0)
        with pytest.raises(ValueError):
            PriorInjection(focal1=-1.0)
        with pytest.raises(ValueError):
            PriorInjection(gravity1=(0.0, 0.0, 2.0))
        assert PriorInjection(-0.1, -0.2, 1.0, 1.0).calibrated

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(refine_blocks={"rotation", "zoom"})
        with pytest.raises(ValueError):
            RansacConfig(confidence=1.0)


class TestRansac:
    def test_sampling_recovers_visible_distortion(self, monkeypatch):
        good = 0
        for trial in range(100):
            c, gt, d1, d2 = fixed_lambda_pair(monkeypatch, -0.9, 100 + trial, noise_px=1.6, outliers=0.3)
            res = ransac_estimate(c, d1, d2, "7pt", SamplingStrategy.same([-0.6, -0.9, -1.2], True),
                                  RansacConfig(seed=trial, shared=True))
            good += pose_error(gt, res.model) < 2.0 and abs(res.model.cam1.lam + 0.9) < 0.1
        assert good >= 80

    def test_perfect_pinhole_data(self, monkeypatch):
        c, gt, d1, d2 = fixed_lambda_pair(monkeypatch, 0.0, 7, n=200)
        cfg = RansacConfig(seed=1, shared=True)
        res = ransac_estimate(c, d1, d2, "7pt", SamplingStrategy(), cfg)
        assert pose_error(gt, res.model) < 1e-3
        assert res.iterations_run < cfg.max_iterations

    def test_zero_strategy_is_plain_pinhole(self, monkeypatch):
        c, _, d1, d2 = fixed_lambda_pair(monkeypatch, 0.0, 8, noise_px=1.0, outliers=0.3, n=200)
        a = ransac_estimate(c, d1, d2, "7pt", None, RansacConfig(seed=4))
        b = ransac_estimate(c, d1, d2, "7pt", SamplingStrategy.same([0.0]), RansacConfig(seed=4))
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert a.score == b.score

    def test_collinear_points(self):
        x = np.linspace(-0.4, 0.4, 10)
        c = np.column_stack([x, 0.5 * x, x + 0.01, 0.5 * x])
        with pytest.raises(NoModelFound):
            ransac_estimate(c, DIMS, DIMS, "7pt", None, RansacConfig(max_iterations=50))

    def test_not_enough(self):
        with pytest.raises(NotEnoughCorrespondences):
            ransac_estimate(np.zeros((8, 4)), DIMS, DIMS, "9ptFlambda", None)

    def test_unknown_engine(self):
        with pytest.raises(ValueError):
            ransac_estimate(np.zeros((20, 4)), DIMS, DIMS, "5pt", None)

    def test_reproducible(self, monkeypatch):
        c, _, d1, d2 = fixed_lambda_pair(monkeypatch, -1.3, 9, noise_px=1.0, outliers=0.3, n=200)
        runs = [ransac_estimate(c, d1, d2, "7pt", SamplingStrategy.same([-0.6, -1.2]), RansacConfig(seed=5))
                for _ in range(2)]
        assert np.array_equal(runs[0].model.fundamental, runs[1].model.fundamental)
        assert np.array_equal(runs[0].inlier_mask, runs[1].inlier_mask)

    @pytest.mark.parametrize("engine,strategy", [
        ("7pt", SamplingStrategy.same([-0.5, -1.0, -1.5])),
        ("8pt", SamplingStrategy.same([-0.5, -1.0])),
        ("9ptFlambda", None),
    ])
    def test_returned_models_are_valid(self, monkeypatch, engine, strategy):
        c, gt, d1, d2 = fixed_lambda_pair(monkeypatch, -1.0, 10, noise_px=1.0, outliers=0.2, n=300,
                                          shared=False)
        res = ransac_estimate(c, d1, d2, engine, strategy, RansacConfig(seed=2))
        for cam in (res.model.cam1, res.model.cam2):
            assert -2.0 <= cam.lam <= 0.5
            assert cam.focal > 0
        assert res.model.pose is not None

    def test_calibrated_prior_path(self, monkeypatch):
        c, gt, d1, d2 = fixed_lambda_pair(monkeypatch, -0.7, 11, noise_px=1.0, outliers=0.3, n=300)
        pri = PriorInjection(gt.cam1.lam, gt.cam2.lam, gt.cam1.focal, gt.cam2.focal)
        res = ransac_estimate(c, d1, d2, "8pt", pri, RansacConfig(seed=3))
        assert res.info["calibrated_substitution"] == "8pt+essential-projection"
        assert pose_error(gt, res.model) < 2.0

    def test_lambda_prior_path(self, monkeypatch):
        c, gt, d1, d2 = fixed_lambda_pair(monkeypatch, -0.7, 12, noise_px=1.0, outliers=0.3, n=300)
        res = ransac_estimate(c, d1, d2, "7pt", PriorInjection(-0.7, -0.7), RansacConfig(seed=3))
        assert "calibrated_substitution" not in res.info
        assert pose_error(gt, res.model) < 2.0


class TestLocalOptimization:
    def test_stationary_at_ground_truth(self, monkeypatch):
        c, gt, d1, _ = fixed_lambda_pair(monkeypatch, -0.9, 20, n=200)
        thr = TruncatedScore.from_pixels(3.0, d1).threshold_sq
        out = robust.lo_refine(gt.model, c, np.ones(len(c), bool), RansacConfig(), thr)
        assert np.allclose(out.fundamental, gt.model.fundamental, atol=1e-10)
        assert abs(out.cam1.lam - gt.cam1.lam) < 1e-10

    def test_recovers_perturbed_lambda(self, monkeypatch):
        c, gt, d1, _ = fixed_lambda_pair(monkeypatch, -0.9, 21, n=500, shared=False)
        start = model_with(gt, lam1=gt.cam1.lam + 0.2, lam2=gt.cam2.lam + 0.2)
        out = robust.lo_refine(start, c, np.ones(len(c), bool), RansacConfig(lo_max_lm_iterations=100))
        assert abs(out.cam1.lam - gt.cam1.lam) < 1e-3
        assert abs(out.cam2.lam - gt.cam2.lam) < 1e-3

    def test_shared_refinement_ties_parameters(self, monkeypatch):
        c, gt, d1, _ = fixed_lambda_pair(monkeypatch, -1.1, 22, noise_px=1.0, n=300)
        start = model_with(gt, lam1=-1.0, lam2=-1.0)
        out = robust.lo_refine(start, c, np.ones(len(c), bool), RansacConfig(shared=True))
        assert out.cam1.lam == out.cam2.lam and out.cam1.focal == out.cam2.focal

    def test_only_selected_blocks_move(self, monkeypatch):
        c, gt, d1, _ = fixed_lambda_pair(monkeypatch, -0.9, 23, noise_px=1.0, n=300)
        start = model_with(gt, lam1=-0.8, lam2=-0.8)
        cfg = RansacConfig(refine_blocks={"rotation", "translation"})
        out = robust.lo_refine(start, c, np.ones(len(c), bool), cfg)
        assert out.cam1.lam == -0.8 and out.cam1.focal == pytest.approx(gt.cam1.focal, rel=1e-12)

    def test_jacobian_against_central_differences(self, monkeypatch):
        rng = np.random.default_rng(24)
        worst = 0.0
        for k in range(100):
            R = oracles.random_rotation(rng)
            pose = RelativePose(R, rng.normal(size=3))
            cam1 = CameraModel(rng.uniform(0.5, 1.5), DivisionModel(rng.uniform(-1.8, 0.0)))
            cam2 = CameraModel(rng.uniform(0.5, 1.5), DivisionModel(rng.uniform(-1.8, 0.0)))
            st = robust._State.from_model(model_from_pose(pose, cam1, cam2))
            c = rng.uniform(-0.5, 0.5, (1, 4))
            param = robust._Param(frozenset(BLOCKS), shared=bool(k % 2))
            if k % 2:  # shared increments act on tied intrinsics
                st.f2, st.l2 = st.f1, st.l1
            _, J = robust.lm_jacobian(st, c, param)
            h = 1e-6
            fd = np.empty_like(J)
            for j in range(len(param)):
                d = np.zeros(len(param))
                d[j] = h
                fd[:, j] = (robust.lm_residuals(param.apply(st, d), c)
                            - robust.lm_residuals(param.apply(st, -d), c)) / (2 * h)
            worst = max(worst, np.max(np.abs(fd - J)) / max(np.max(np.abs(J)), 1e-12))
        assert worst < 1e-5

    def test_residuals_square_to_errors(self, monkeypatch):
        c, gt, *_ = fixed_lambda_pair(monkeypatch, -0.9, 25, noise_px=2.0, n=50)
        r = robust.lm_residuals(robust._State.from_model(gt.model), c)
        e = robust.model_errors(gt.model.fundamental, -0.9, -0.9, c)
        assert np.allclose(r * r, e, rtol=1e-10)

    def test_never_increases_cost(self, monkeypatch):
        rng = np.random.default_rng(26)
        for k in range(20):
            c, gt, d1, _ = fixed_lambda_pair(monkeypatch, -1.2, 30 + k, noise_px=2.0, outliers=0.3, n=150,
                                             shared=False)
            start = model_with(gt, lam1=gt.cam1.lam + rng.uniform(-0.3, 0.3))
            thr = TruncatedScore.from_pixels(3.0, d1).threshold_sq
            mask = rng.random(len(c)) < 0.8
            out = robust.lo_refine(start, c, mask, RansacConfig(), thr)
            assert robust.truncated_cost(out, c[mask], thr) <= robust.truncated_cost(start, c[mask], thr)

    def test_needed_iterations(self):
        assert robust._needed_iterations(1.0, 7, 0.99) == 0.0
        assert robust._needed_iterations(0.5, 7, 0.99) == pytest.approx(np.log(0.01) / np.log(1 - 0.5**7))
        assert robust._needed_iterations(1e-300, 7, 0.99) == np.inf
