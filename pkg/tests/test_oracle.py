import itertools

import numpy as np
import pytest

from castwb.chroma import CASTS, NEUTRAL, Cast, DomainError, angular_error_deg, normalize, rotate_toward
from castwb.imaging import XYZ_TO_SRGB, LinearImage, SrgbImage, apply_illuminant, to_pseudo_srgb, white_balance
from castwb.oracle import (
    AssessContext,
    OracleContractError,
    ground_truth_oracle,
    gt_residual_label,
    noisy_oracle,
    statistical_oracle,
)

from conftest import random_illuminants

BLANK = SrgbImage(np.zeros((4, 4, 3)))


def by_hand(gt, est):
    r = [g / e for g, e in zip(gt, est)]
    gm = (r[0] * r[1] * r[2]) ** (1 / 3)
    r = [x / gm for x in r]
    return CASTS[r.index(max(r))]


class TestLabel:
    def test_dominant(self):
        assert gt_residual_label(normalize([2, 1, 1]), NEUTRAL) is Cast.RED

    def test_tie_goes_to_red(self):
        v = normalize([0.4, 0.8, 0.5])
        assert gt_residual_label(v, v) is Cast.RED

    def test_green_blue_tie(self):
        assert gt_residual_label(NEUTRAL, normalize([2, 1, 1])) is Cast.GREEN

    def test_matches_hand_rule(self, rng):
        for _ in range(500):
            gt, est = random_illuminants(rng, 2)
            assert gt_residual_label(gt, est) is by_hand(gt, est)

    def test_scale_invariant(self, rng):
        for _ in range(200):
            gt, est = rng.uniform(0.05, 1, (2, 3))
            a, b = rng.uniform(0.1, 10, 2)
            assert gt_residual_label(gt, est) is gt_residual_label(a * gt, b * est)

    def test_permutation_equivariant(self, rng):
        checked = 0
        for _ in range(100):
            gt, est = random_illuminants(rng, 2)
            r = np.sort(gt / est)
            if r[-1] - r[-2] < 1e-9 * r[-1]:
                continue
            base = gt_residual_label(gt, est)
            for perm in itertools.permutations(range(3)):
                perm = list(perm)
                label = gt_residual_label(gt[perm], est[perm])
                assert perm[label.index] == base.index
            checked += 1
        assert checked > 90

    def test_constant_along_geodesic(self, rng):
        # est moving from gt toward an axis: the label may change only at a tie crossing.
        for _ in range(100):
            gt = random_illuminants(rng, 1)[0]
            c = CASTS[rng.integers(3)]
            est = gt
            labels, margins = [], []
            for _ in range(200):
                est = rotate_toward(est, c, 0.05)
                r = np.sort(gt / est)
                labels.append(gt_residual_label(gt, est))
                margins.append((r[-1] - r[-2]) / r[-1])
            changes = [i for i in range(1, len(labels)) if labels[i] is not labels[i - 1]]
            assert len(changes) <= 1
            for i in changes:
                assert min(margins[i - 1], margins[i]) < 2e-3


class TestGroundTruthOracle:
    def test_needs_estimate(self):
        with pytest.raises(OracleContractError):
            ground_truth_oracle(NEUTRAL).assess(BLANK, (), AssessContext(1))

    def test_fixed_point_tie(self):
        gt = normalize([0.5, 1, 0.6])
        assert ground_truth_oracle(gt).assess(BLANK, (), AssessContext(1, gt)) is Cast.RED

    def test_rotated_toward_blue(self, rng):
        for gt in random_illuminants(rng, 50):
            est = rotate_toward(gt, Cast.BLUE, 5.0)
            label = ground_truth_oracle(gt).assess(BLANK, (), AssessContext(1, est))
            assert label in (Cast.RED, Cast.GREEN)
            assert label is gt_residual_label(gt, est)

    def test_replay_along_trajectory(self, rng):
        gt = normalize([0.45, 1.0, 0.7])
        oracle = ground_truth_oracle(gt)
        est = normalize([0.7, 1.0, 0.4])
        for t in range(1, 30):
            label = oracle.assess(BLANK, (), AssessContext(t, est))
            assert label is gt_residual_label(gt, est)
            est = rotate_toward(est, label, 1.0)

    def test_priors(self):
        priors = ground_truth_oracle(NEUTRAL).extract_priors(BLANK)
        assert 2 <= len(priors) <= 6


class ConstantOracle:
    supports_priors = False

    def __init__(self, label):
        self.label = label

    def assess(self, image, priors, context):
        return self.label

    def extract_priors(self, image, context=None):
        return ()


class TestNoisyOracle:
    def contexts(self, n):
        return [AssessContext(i % 20 + 1, None, f"scene{i // 20}") for i in range(n)]

    def test_p0_identity(self):
        o = noisy_oracle(ConstantOracle(Cast.GREEN), 0.0, seed=3)
        assert all(o.assess(BLANK, (), c) is Cast.GREEN for c in self.contexts(500))

    def test_p1_always_flips(self):
        o = noisy_oracle(ConstantOracle(Cast.GREEN), 1.0, seed=3)
        labels = [o.assess(BLANK, (), c) for c in self.contexts(500)]
        assert Cast.GREEN not in labels
        assert {Cast.RED, Cast.BLUE} == set(labels)

    def test_flip_rate(self):
        o = noisy_oracle(ConstantOracle(Cast.RED), 0.3, seed=8)
        flips = sum(o.assess(BLANK, (), c) is not Cast.RED for c in self.contexts(10_000))
        assert abs(flips / 10_000 - 0.3) < 0.02

    def test_replay_identical(self):
        a = noisy_oracle(ConstantOracle(Cast.BLUE), 0.5, seed=4)
        b = noisy_oracle(ConstantOracle(Cast.BLUE), 0.5, seed=4)
        ctx = self.contexts(300)
        first = [a.assess(BLANK, (), c) for c in ctx]
        assert first == [b.assess(BLANK, (), c) for c in reversed(ctx)][::-1]
        assert first == [a.assess(BLANK, (), c) for c in ctx]

    def test_bad_p(self):
        with pytest.raises(DomainError):
            noisy_oracle(ConstantOracle(Cast.RED), 1.5, 0)


class TestStatisticalOracle:
    def test_blue_tint(self):
        img = SrgbImage(np.broadcast_to([0.2, 0.3, 0.9], (8, 8, 3)))
        assert statistical_oracle(6).assess(img, (), AssessContext(1)) is Cast.BLUE

    def test_neutral_tie(self):
        img = SrgbImage(np.full((8, 8, 3), 0.5))
        assert statistical_oracle(6).assess(img, (), AssessContext(1)) is Cast.RED

    def test_black_image(self):
        with pytest.raises(OracleContractError):
            statistical_oracle(6).assess(BLANK, (), AssessContext(1))

    def test_agrees_with_gt_on_uniform_scenes(self, rng):
        ccm = np.linalg.inv(XYZ_TO_SRGB)
        oracle = statistical_oracle(6)
        checked = 0
        for _ in range(300):
            gt, est = random_illuminants(rng, 2)
            if angular_error_deg(gt, est) <= 1.0:
                continue
            scene = apply_illuminant(LinearImage(np.full((6, 6, 3), 0.3)), gt)
            balanced = white_balance(scene, est)
            if balanced.data.max() >= 1.0:
                continue  # clipped highlights no longer carry the cast
            view = to_pseudo_srgb(balanced, ccm)
            assert oracle.assess(view, (), AssessContext(1, est)) is gt_residual_label(gt, est)
            checked += 1
        assert checked > 100
