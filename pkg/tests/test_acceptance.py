"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one printed
PASS line per criterion alongside the pytest verdicts. Every tolerance is
pinned here; nothing is deferred to later calibration.
"""

import time

import numpy as np
import pytest

from lotfusion.detection import DetectorNoise, detect
from lotfusion.geometry import (
    Correspondence,
    Homography,
    MaskPolygon,
    RansacParams,
    apply,
    estimate_dlt,
    estimate_ransac,
    iou,
)
from lotfusion.evaluation import (
    PUBLISHED_ABS_ERROR,
    mean_row,
    published_reference_rows,
    run_baseline_B,
    run_baseline_S,
)
from lotfusion.messages import decode_message, encode_message
from lotfusion.protocol import compute_mu, sink_aggregate
from lotfusion.runner import ProtocolRunner
from lotfusion.scenario import (
    coverage_depth,
    preset,
    render_observation,
    standard_suite,
    true_pairwise_homography,
)

from oracles import random_convex_quad, raster_iou, shapely_mu
from test_detection import make_obs

# Frozen seeds: the suite-level criteria are regression-pinned to these.
CONSERVATION_SEED = 5
NOISY_SEED = 2024
RANSAC_TRIAL_COUNT = 100


def _ok(criterion: str, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: PASS ({detail})")


class TestCriterion1Conservation:
    def test_zero_noise_exact_on_standard_suite(self):
        worst_elapsed = 0.0
        rounds_checked = 0
        for spec in standard_suite(noise="zero"):
            start = time.perf_counter()
            with ProtocolRunner(spec, seed=CONSERVATION_SEED) as runner:
                for report, _ in runner.run():
                    assert report.complete
                    assert report.rounded_count == report.ground_truth, (
                        f"{spec.label} round {report.round}: "
                        f"{report.rounded_count} != {report.ground_truth}"
                    )
                    rounds_checked += 1
            elapsed = time.perf_counter() - start
            worst_elapsed = max(worst_elapsed, elapsed)
            assert elapsed < 5.0, f"{spec.label} took {elapsed:.2f}s"
        _ok(
            "1 (conservation at zero noise)",
            f"{rounds_checked} rounds exact, slowest sequence {worst_elapsed:.2f}s < 5s",
        )


class TestCriterion2ErrorOrdering:
    def test_sign_and_ordering_on_noisy_suite(self):
        errors = {"B": [], "S": [], "O": []}
        num_spaces = []
        for spec in standard_suite():
            with ProtocolRunner(spec, seed=NOISY_SEED) as runner:
                for report, trace in runner.run():
                    truth = report.ground_truth
                    errors["B"].append(run_baseline_B(report.etas) - truth)
                    errors["S"].append(run_baseline_S(trace) - truth)
                    errors["O"].append(report.global_count - truth)
                    num_spaces.append(runner.world.num_spaces)
        n = len(num_spaces)
        assert n >= 20
        mean = {s: sum(v) / n for s, v in errors.items()}
        mre = {
            s: 100.0 * sum(abs(e) / w for e, w in zip(v, num_spaces)) / n
            for s, v in errors.items()
        }
        assert mean["B"] > 0, f"baseline B should overcount, got {mean['B']:+.3f}"
        assert mean["S"] <= 0, f"simplified S should not overcount, got {mean['S']:+.3f}"
        assert abs(mean["O"]) < abs(mean["S"]) < abs(mean["B"])
        assert mre["O"] < 5.0, f"ours MRE {mre['O']:.2f}% >= 5%"
        assert mre["B"] > 20.0, f"baseline B MRE {mre['B']:.2f}% <= 20%"
        _ok(
            "2 (error sign/ordering over noisy suite)",
            f"{n} rounds: mean err B {mean['B']:+.2f} S {mean['S']:+.2f} O {mean['O']:+.3f}; "
            f"MRE B {mre['B']:.1f}% O {mre['O']:.2f}%",
        )


class TestCriterion3ReferenceTableMeans:
    def test_mean_row_arithmetic(self):
        rows = published_reference_rows()
        m = mean_row(rows)
        assert m.abs_err["S"] == pytest.approx(36.3, abs=0.05)
        assert m.abs_err["O"] == pytest.approx(2.8, abs=0.05)
        # Recomputing B's column gives 111.67 where the source prints 111.6;
        # the discrepancy is documented, the recomputed value is asserted.
        b_mean = sum(PUBLISHED_ABS_ERROR["B"]) / len(PUBLISHED_ABS_ERROR["B"])
        assert b_mean == pytest.approx(111.67, abs=0.1)
        assert m.abs_err["B"] == pytest.approx(b_mean, abs=1e-9)
        _ok(
            "3 (reference table mean-row arithmetic)",
            f"S {m.abs_err['S']:.3f} (36.3±0.05), O {m.abs_err['O']:.3f} (2.8±0.05), "
            f"B {b_mean:.2f} recomputed vs 111.6 printed",
        )


class TestCriterion4HomographyPipeline:
    def test_ransac_recovery_under_outliers(self):
        world = preset("chain5").build_world()
        pairs = world.neighbor_pairs()
        features = {
            cam: render_observation(world, cam).landmark_features
            for cam in world.camera_ids()
        }
        successes = 0
        for trial in range(RANSAC_TRIAL_COUNT):
            a, b = pairs[trial % len(pairs)]
            truth = true_pairwise_homography(world, a, b)
            rng = np.random.default_rng(10_000 + trial)
            # Exact correspondences from shared landmarks (b-plane -> a-plane)...
            desc_to_loc = {f.descriptor: f.location for f in features[a]}
            inliers = [
                Correspondence(f.location, desc_to_loc[f.descriptor])
                for f in features[b]
                if f.descriptor in desc_to_loc
            ]
            assert len(inliers) >= 12
            # ...plus up to 40% injected outliers.
            n_out = int(rng.integers(1, len(inliers) * 2 // 3))
            cs = list(inliers) + [
                Correspondence(tuple(rng.uniform(0, 1280, 2)), tuple(rng.uniform(2000, 9000, 2)))
                for _ in range(n_out)
            ]
            assert n_out / len(cs) <= 0.4
            recovered, inlier_indices = estimate_ransac(cs, RansacParams(rng_seed=trial))
            if (
                recovered.max_entry_delta(truth) < 1e-6
                and set(inlier_indices) == set(range(len(inliers)))
            ):
                successes += 1
        assert successes >= 99, f"only {successes}/{RANSAC_TRIAL_COUNT} trials recovered"
        _ok(
            "4a (RANSAC recovery with <=40% outliers)",
            f"{successes}/{RANSAC_TRIAL_COUNT} trials: exact inlier set and <1e-6 canonical error",
        )

    def test_dlt_exact_on_minimal_sets(self):
        rng = np.random.default_rng(77)
        worst = 0.0
        for _ in range(50):
            m = np.array(
                [
                    [rng.uniform(0.7, 1.4), rng.uniform(-0.3, 0.3), rng.uniform(-100, 100)],
                    [rng.uniform(-0.3, 0.3), rng.uniform(0.7, 1.4), rng.uniform(-100, 100)],
                    [rng.uniform(-1e-4, 1e-4), rng.uniform(-1e-4, 1e-4), 1.0],
                ]
            )
            truth = Homography(m)
            pts = [tuple(p) for p in rng.uniform(0.0, 500.0, size=(4, 2))]
            if abs(np.linalg.det(np.column_stack([np.array(pts[:3]), np.ones(3)]))) < 1.0:
                continue  # skip nearly-collinear draws
            est = estimate_dlt([Correspondence(p, apply(truth, p)) for p in pts])
            for p in pts:
                ex, ey = apply(est, p)
                tx, ty = apply(truth, p)
                worst = max(worst, float(np.hypot(ex - tx, ey - ty)))
        assert worst < 1e-8
        _ok("4b (DLT exact on minimal noise-free sets)", f"worst reprojection {worst:.2e} px")


class TestCriterion5OracleEquivalence:
    def test_iou_matches_raster_oracle_1000_pairs(self):
        rng = np.random.default_rng(555)
        worst = 0.0
        for _ in range(1000):
            a = random_convex_quad(rng)
            b = random_convex_quad(rng, offset=rng.uniform(-5.0, 5.0, 2))
            exact = iou(
                MaskPolygon(tuple(map(tuple, a))), MaskPolygon(tuple(map(tuple, b)))
            )
            worst = max(worst, abs(exact - raster_iou(a, b, cell_frac=1e-3)))
        assert worst < 0.02
        _ok("5a (polygon IoU vs raster oracle)", f"1000 quad pairs, worst |delta| {worst:.4f}")

    def test_compute_mu_matches_exhaustive_oracle_100_scenes(self):
        from lotfusion.geometry import ImageBounds, invert

        bounds = ImageBounds(1000.0, 800.0)
        rng = np.random.default_rng(808)
        agreements = 0
        for scene in range(100):
            masks_i = []
            for _ in range(int(rng.integers(1, 9))):
                w, h = rng.uniform(30, 90), rng.uniform(20, 60)
                x, y = rng.uniform(0, 900), rng.uniform(0, 700)
                masks_i.append(MaskPolygon.rectangle(x, y, x + w, y + h))
            h_ji = Homography(
                np.array(
                    [
                        [rng.uniform(0.85, 1.15), rng.uniform(-0.08, 0.08), rng.uniform(-60, 60)],
                        [rng.uniform(-0.08, 0.08), rng.uniform(0.85, 1.15), rng.uniform(-60, 60)],
                        [rng.uniform(-1e-5, 1e-5), rng.uniform(-1e-5, 1e-5), 1.0],
                    ]
                )
            )
            back = invert(h_ji)
            masks_j = [
                MaskPolygon.from_points([apply(back, v) for v in m.vertices])
                for m in masks_i[: int(rng.integers(0, len(masks_i) + 1))]
            ]
            for _ in range(int(rng.integers(0, 5))):
                w, h = rng.uniform(30, 90), rng.uniform(20, 60)
                x, y = rng.uniform(-100, 1000), rng.uniform(-100, 800)
                masks_j.append(MaskPolygon.rectangle(x, y, x + w, y + h))
            ours = compute_mu(tuple(masks_i), tuple(masks_j), h_ji, 0.2, bounds)
            oracle = shapely_mu(masks_i, masks_j, h_ji.m, 0.2, (bounds.width, bounds.height))
            assert ours == oracle, f"scene {scene}: {ours} != oracle {oracle}"
            agreements += 1
        _ok("5b (compute_mu vs exhaustive oracle)", f"{agreements}/100 scenes agree exactly")


class TestCriterion6TauAndAggregation:
    def test_mu_nonincreasing_in_tau(self):
        from lotfusion.geometry import ImageBounds

        bounds = ImageBounds(1000.0, 800.0)
        rng = np.random.default_rng(606)
        checked = 0
        for _ in range(200):
            masks = []
            for _ in range(6):
                w, h = rng.uniform(30, 90), rng.uniform(20, 60)
                x, y = rng.uniform(0, 900), rng.uniform(0, 700)
                masks.append(MaskPolygon.rectangle(x, y, x + w, y + h))
            masks_i, masks_j = tuple(masks[:3]), tuple(masks[3:])
            h = Homography.translation(float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50)))
            values = [
                compute_mu(masks_i, masks_j, h, tau, bounds)
                for tau in (0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 0.95)
            ]
            assert values == sorted(values, reverse=True)
            checked += 1
        _ok("6a (compute_mu non-increasing in tau)", f"{checked} seeded sweeps monotone")

    def test_mean_aggregation_error_not_worse_than_min_max(self):
        def aggregate_error(report, aggregation):
            mu_bars = [
                0.0
                if "registration_failed" in p.flags
                else sink_aggregate(p.mu_ab, p.mu_ba, aggregation)
                for p in report.pairs
            ]
            return (sum(report.etas.values()) - sum(mu_bars)) - report.ground_truth

        abs_err = {"min": [], "max": [], "mean": []}
        for spec in standard_suite():
            with ProtocolRunner(spec, seed=NOISY_SEED, aggregation="mean") as runner:
                for report, _ in runner.run():
                    for aggregation in abs_err:
                        abs_err[aggregation].append(abs(aggregate_error(report, aggregation)))
        means = {a: sum(v) / len(v) for a, v in abs_err.items()}
        assert means["mean"] <= means["min"] + 1e-12
        assert means["mean"] <= means["max"] + 1e-12
        _ok(
            "6b (mean aggregation <= min and max)",
            f"mean|err|: mean {means['mean']:.3f}, min {means['min']:.3f}, max {means['max']:.3f}",
        )


class TestCriterion7Transport:
    def test_sim_and_tcp_identical_reports(self):
        spec = preset("chain3", noise="standard")
        with ProtocolRunner(spec, seed=17, transport="sim") as sim:
            sim_reports = [r.encode() for r, _ in sim.run(rounds=2)]
        with ProtocolRunner(spec, seed=17, transport="tcp") as tcp:
            tcp_reports = [r.encode() for r, _ in tcp.run(rounds=2)]
        assert sim_reports == tcp_reports
        _ok(
            "7a (sim/tcp equivalence)",
            f"{len(sim_reports)} rounds byte-identical across transports",
        )

    def test_round_trip_10k_messages(self):
        from lotfusion.geometry import ImageBounds
        from lotfusion.messages import (
            ComputeSignal,
            EtaReport,
            ImageShare,
            InitSignal,
            MaskShare,
            MuReport,
            ProtocolMessage,
        )
        from lotfusion.registration import Feature

        rng = np.random.default_rng(7777)
        ids = ("cam0", "cam1", "cam2", "sink")

        def grid_rect():
            nx, ny = (int(v) for v in rng.integers(-5_000_000, 5_000_000, 2))
            nw, nh = (int(v) for v in rng.integers(1, 400_000, 2))
            return MaskPolygon.rectangle(nx / 1e3, ny / 1e3, (nx + nw) / 1e3, (ny + nh) / 1e3)

        def random_payload(k):
            kind = k % 6
            if kind == 0:
                return InitSignal(ack=bool(rng.integers(0, 2)), failed=tuple(sorted(
                    rng.choice(ids, size=int(rng.integers(0, 3)), replace=False)
                )))
            if kind == 1:
                return ImageShare(
                    bounds=ImageBounds(float(rng.integers(1, 4000)), float(rng.integers(1, 4000))),
                    features=tuple(
                        Feature(tuple(rng.uniform(-1e4, 1e4, 2)), tuple(rng.normal(0, 1, 4)))
                        for _ in range(int(rng.integers(0, 4)))
                    ),
                )
            if kind == 2:
                return ComputeSignal()
            if kind == 3:
                return MaskShare(masks=tuple(grid_rect() for _ in range(int(rng.integers(0, 4)))))
            if kind == 4:
                return EtaReport(eta=int(rng.integers(0, 500)))
            return MuReport(
                j=str(rng.choice(ids)), i=str(rng.choice(ids)), mu=int(rng.integers(0, 500))
            )

        count = 10_000
        for k in range(count):
            msg = ProtocolMessage.wrap(
                random_payload(k),
                src=str(rng.choice(ids)),
                dst=str(rng.choice(ids)),
                round=int(rng.integers(0, 10_000)),
            )
            assert decode_message(encode_message(msg)) == msg
        _ok("7b (serialization round-trip)", f"{count} random messages, all six kinds")


class TestCriterion8TripleOverlap:
    def test_undercount_equals_triple_covered_cars(self):
        spec = preset("triple3", noise="zero")
        checked = 0
        with ProtocolRunner(spec, seed=2) as runner:
            for report, _ in runner.run(rounds=3):
                world = runner._world_for_round(report.round)
                k = sum(1 for d in coverage_depth(world).values() if d >= 3)
                assert k > 0
                assert report.rounded_count == report.ground_truth - k
                checked += 1
        _ok(
            "8 (triple-overlap diagnostic)",
            f"{checked} rounds undercount by exactly the triple-covered cars",
        )


class TestCriterion9DetectorValidation:
    def test_monte_carlo_expected_count(self):
        obs = make_obs(n_cars=10)
        draws = 10_000
        total = 0
        for r in range(draws):
            total += len(detect(obs, DetectorNoise(p_miss=0.1, fp_rate=0.5, rng_seed=909), r))
        mean = total / draws
        assert mean == pytest.approx(9.5, abs=0.1)
        _ok(
            "9 (detector Monte-Carlo validation)",
            f"mean detections {mean:.3f} vs analytic 9.5 +/- 0.1 over {draws} draws",
        )
