"""Loss kernels against closed forms, finite differences, and oracles."""

import numpy as np
import pytest

from conftest import random_rotation
from xtalkit.losses import (
    LossWeights,
    NoiseLevel,
    PointSet,
    aligned_mse,
    composite_loss,
    default_distogram_edges,
    distogram_loss,
    edm_loss_weight,
    kabsch_align,
    sldd_loss,
    smooth_lddt,
    ve_forward_noise,
)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# smooth LDDT of a perfect prediction: every masked pair has delta = 0
IDENTITY_SLDDT = (sigmoid(0.5) + sigmoid(1.0) + sigmoid(2.0) + sigmoid(4.0)) / 4


def cloud(n, seed, spread=5.0):
    return np.random.default_rng(seed).uniform(-spread, spread, size=(n, 3))


def quaternion_align_rmsd(moving, target):
    """Independent Kabsch oracle via Horn's quaternion method."""
    p = moving - moving.mean(axis=0)
    q = target - target.mean(axis=0)
    s = p.T @ q
    sxx, sxy, sxz = s[0]
    syx, syy, syz = s[1]
    szx, szy, szz = s[2]
    k = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    lam = np.linalg.eigvalsh(k)[-1]
    msd = (np.sum(p ** 2) + np.sum(q ** 2) - 2 * lam) / len(p)
    return float(np.sqrt(max(msd, 0.0)))


class TestKabsch:
    def test_identity(self):
        pts = cloud(10, 0)
        rot, trans, rmsd = kabsch_align(pts, pts)
        np.testing.assert_allclose(rot, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(trans, 0.0, atol=1e-10)
        assert rmsd < 1e-12

    def test_recovers_rigid_motion(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pts = cloud(12, rng.integers(1 << 30))
            r_true = random_rotation(rng)
            t_true = rng.uniform(-10, 10, 3)
            moved = pts @ r_true.T + t_true
            rot, trans, rmsd = kabsch_align(pts, moved)
            np.testing.assert_allclose(rot, r_true, atol=1e-8)
            np.testing.assert_allclose(trans, t_true, atol=1e-8)
            assert rmsd < 1e-8

    def test_matches_quaternion_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            a = cloud(50, rng.integers(1 << 30))
            b = a @ random_rotation(rng).T + rng.uniform(-3, 3, 3)
            b += rng.normal(scale=0.4, size=b.shape)
            _, _, rmsd = kabsch_align(a, b)
            assert rmsd == pytest.approx(quaternion_align_rmsd(a, b),
                                         abs=1e-9)

    def test_proper_rotation_only(self):
        rng = np.random.default_rng(3)
        a = cloud(20, 4)
        b = a @ np.diag([1.0, 1.0, -1.0])  # reflected copy
        rot, _, rmsd = kabsch_align(a, b)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-10)
        assert rmsd > 0.1  # reflection must not be matched exactly

    def test_degenerate_rejected(self):
        line = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3.0, 0, 0]])
        with pytest.raises(ValueError, match="degenerate alignment"):
            kabsch_align(line, line + 1.0)
        with pytest.raises(ValueError, match="degenerate alignment"):
            kabsch_align(np.zeros((2, 3)), np.ones((2, 3)))

    def test_optimality_against_random_perturbations(self):
        rng = np.random.default_rng(5)
        a = cloud(15, 6)
        b = a @ random_rotation(rng).T + rng.uniform(-2, 2, 3)
        b += rng.normal(scale=0.3, size=b.shape)
        rot, trans, rmsd = kabsch_align(a, b)
        for _ in range(1000):
            # small random proper rigid motion composed onto the solution
            axis_angle = rng.normal(scale=0.05, size=3)
            theta = np.linalg.norm(axis_angle)
            k = axis_angle / theta
            kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]],
                           [-k[1], k[0], 0]])
            r_pert = (np.eye(3) + np.sin(theta) * kx
                      + (1 - np.cos(theta)) * kx @ kx)
            t_pert = rng.normal(scale=0.05, size=3)
            moved = (a @ (r_pert @ rot).T) + trans + t_pert
            perturbed = float(np.sqrt(np.mean(
                ((moved - b) ** 2).sum(axis=1))))
            assert perturbed >= rmsd - 1e-12

    def test_weighted_alignment(self):
        rng = np.random.default_rng(7)
        a = cloud(10, 8)
        b = a.copy()
        b[0] += 5.0  # outlier
        w = np.ones(10)
        w[0] = 0.0
        _, _, rmsd = kabsch_align(PointSet(a, w), PointSet(b))
        assert rmsd < 1e-10


class TestAlignedMse:
    def test_identical(self):
        pts = cloud(8, 9)
        assert aligned_mse(pts, pts) == pytest.approx(0.0, abs=1e-14)

    def test_rigid_motion_removed(self):
        rng = np.random.default_rng(10)
        pts = cloud(9, 11)
        moved = pts @ random_rotation(rng).T + rng.uniform(-4, 4, 3)
        assert aligned_mse(pts, moved) == pytest.approx(0.0, abs=1e-14)

    def test_uniform_offset_removed(self):
        pts = cloud(7, 12)
        assert aligned_mse(pts + np.array([1.0, 0, 0]), pts) == pytest.approx(
            0.0, abs=1e-14)

    def test_nonrigid_matches_direct_formula(self):
        rng = np.random.default_rng(13)
        gt = cloud(12, 14)
        pred = gt + rng.normal(scale=0.5, size=gt.shape)
        rot, trans, _ = kabsch_align(gt, pred)
        aligned = gt @ rot.T + trans
        want = np.mean(((pred - aligned) ** 2).sum(axis=1)) / 3.0
        assert aligned_mse(pred, gt) == pytest.approx(want, rel=1e-12)

    def test_se3_invariance(self):
        rng = np.random.default_rng(15)
        gt = cloud(11, 16)
        pred = gt + rng.normal(scale=0.4, size=gt.shape)
        base = aligned_mse(pred, gt)
        for _ in range(5):
            p2 = pred @ random_rotation(rng).T + rng.uniform(-5, 5, 3)
            g2 = gt @ random_rotation(rng).T + rng.uniform(-5, 5, 3)
            assert abs(aligned_mse(p2, g2) - base) < 1e-10


class TestSmoothLddt:
    def test_identity_closed_form(self):
        pts = cloud(10, 17, spread=4.0)
        breakdown = smooth_lddt(pts, pts)
        assert breakdown.value == pytest.approx(IDENTITY_SLDDT, abs=1e-12)

    def test_three_atom_hand_computation(self):
        gt = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
        pred = np.array([[0.0, 0, 0], [1.0, 0, 0], [13.0, 0, 0]])
        # pair distances gt: (1, 3, 2); pred: (1, 13, 12)
        deltas = {(0, 1): 0.0, (0, 2): 10.0, (1, 2): 10.0}
        eps = {
            k: sum(sigmoid(t - d) for t in (0.5, 1, 2, 4)) / 4
            for k, d in deltas.items()
        }
        want = sum(eps.values()) / 3  # mask: all three pairs (gt < 15 A)
        got = smooth_lddt(pred, gt).value
        assert got == pytest.approx(want, abs=1e-12)

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(18)
        gt = cloud(9, 19)
        pred = gt + rng.normal(scale=0.3, size=gt.shape)
        base = smooth_lddt(pred, gt).value
        moved = pred @ random_rotation(rng).T + rng.uniform(-8, 8, 3)
        assert smooth_lddt(moved, gt).value == pytest.approx(base, abs=1e-12)

    def test_inclusion_radius_masks_far_pairs(self):
        gt = np.array([[0.0, 0, 0], [1.0, 0, 0], [30.0, 0, 0]])
        pred = gt.copy()
        pred[2, 0] = 40.0  # only far pairs disturbed
        breakdown = smooth_lddt(pred, gt, inclusion_radius=15.0)
        assert breakdown.value == pytest.approx(IDENTITY_SLDDT, abs=1e-12)
        assert int(breakdown.mask.sum()) == 2  # the (0,1) pair, both ways

    def test_paper_literal_mask(self):
        gt = np.array([[0.0, 0, 0], [1.0, 0, 0], [30.0, 0, 0]])
        pred = gt.copy()
        breakdown = smooth_lddt(pred, gt, mask_source="paper_literal")
        # all pairs pass delta < 15 and the denominator is d(d-1)
        assert breakdown.value == pytest.approx(IDENTITY_SLDDT, abs=1e-12)

    def test_strict_range(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            gt = cloud(6, rng.integers(1 << 30))
            pred = gt + rng.normal(scale=rng.uniform(0, 3), size=gt.shape)
            v = smooth_lddt(pred, gt).value
            assert 0.0 < v < 1.0

    def test_requires_two_points(self):
        with pytest.raises(ValueError):
            smooth_lddt(np.zeros((1, 3)), np.zeros((1, 3)))


class TestSlddLoss:
    def test_identity_value(self):
        pts = cloud(10, 21, spread=4.0)
        assert sldd_loss(pts, pts) == pytest.approx(1 - IDENTITY_SLDDT,
                                                    abs=1e-12)

    def test_saturates_towards_one(self):
        gt = cloud(8, 22, spread=2.0)
        pred = gt * 300.0
        assert sldd_loss(pred, gt) > 0.97

    def test_monotone_in_uniform_inflation(self):
        gt = cloud(8, 23, spread=3.0)
        last = -np.inf
        for scale in (1.0, 1.2, 1.6, 2.4, 4.0, 8.0):
            loss = sldd_loss(gt * scale, gt)
            assert loss >= last - 1e-12
            last = loss


class TestDistogram:
    def test_confident_correct_logits(self):
        gt = cloud(6, 24, spread=4.0)
        edges = default_distogram_edges()
        d = len(gt)
        dist = np.linalg.norm(gt[:, None] - gt[None, :], axis=2)
        bins = np.searchsorted(edges, dist, side="right")
        logits = np.full((d, d, 64), -30.0)
        for i in range(d):
            for j in range(d):
                logits[i, j, bins[i, j]] = 30.0
        assert distogram_loss(logits, gt) == pytest.approx(0.0, abs=1e-10)

    def test_uniform_logits(self):
        gt = cloud(5, 25)
        logits = np.zeros((5, 5, 64))
        assert distogram_loss(logits, gt) == pytest.approx(np.log(64),
                                                           rel=1e-12)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(26)
        gt = cloud(7, 27, spread=6.0)
        d = len(gt)
        logits = rng.normal(size=(d, d, 64))
        edges = default_distogram_edges()

        total, count = 0.0, 0
        for i in range(d):
            for j in range(d):
                if i == j:
                    continue
                pair = 0.5 * (logits[i, j] + logits[j, i])
                probs = np.exp(pair) / np.exp(pair).sum()
                dist = np.linalg.norm(gt[i] - gt[j])
                b = int(np.searchsorted(edges, dist, side="right"))
                total += -np.log(probs[b])
                count += 1
        assert distogram_loss(logits, gt) == pytest.approx(total / count,
                                                           rel=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            distogram_loss(np.zeros((4, 4, 10)), cloud(4, 28))

    def test_open_outer_bins(self):
        gt = np.array([[0.0, 0, 0], [0.5, 0, 0], [40.0, 0, 0]])  # d<2, d>22
        logits = np.zeros((3, 3, 64))
        val = distogram_loss(logits, gt)
        assert np.isfinite(val)


class TestVeForwardNoise:
    def test_tiny_sigma(self):
        x = cloud(20, 29)
        out = ve_forward_noise(x, NoiseLevel(1e-12), seed=0)
        assert np.max(np.abs(out - x)) < 1e-10

    def test_variance_monte_carlo(self):
        x = np.zeros((100_000, 3))
        out = ve_forward_noise(x, 2.5, seed=1)
        assert np.var(out) == pytest.approx(6.25, rel=0.01)

    def test_deterministic(self):
        x = cloud(10, 30)
        a = ve_forward_noise(x, 1.0, seed=7)
        b = ve_forward_noise(x, 1.0, seed=7)
        np.testing.assert_array_equal(a, b)
        c = ve_forward_noise(x, 1.0, seed=8)
        assert not np.array_equal(a, c)


class TestCompositeLoss:
    def test_identity_report(self):
        pts = cloud(9, 31, spread=4.0)
        report = composite_loss(pts, pts)
        assert report.mse == pytest.approx(0.0, abs=1e-13)
        assert report.slddt_loss == pytest.approx(1 - IDENTITY_SLDDT,
                                                  abs=1e-12)
        assert report.total == pytest.approx(report.slddt_loss, abs=1e-12)

    def test_linear_in_lambda(self):
        rng = np.random.default_rng(32)
        gt = cloud(6, 33, spread=4.0)
        pred = gt + rng.normal(scale=0.3, size=gt.shape)
        logits = rng.normal(size=(6, 6, 64))
        r1 = composite_loss(pred, gt, logits, LossWeights(lambda_dist=1.0))
        r2 = composite_loss(pred, gt, logits, LossWeights(lambda_dist=2.0))
        assert r2.total - r1.total == pytest.approx(r1.distogram, rel=1e-10)

    def test_lambda_zero_drops_term(self):
        gt = cloud(5, 34)
        report = composite_loss(gt, gt, None, LossWeights(lambda_dist=0.0))
        assert report.distogram == 0.0

    def test_lambda_positive_requires_logits(self):
        gt = cloud(5, 35)
        with pytest.raises(ValueError, match="logits"):
            composite_loss(gt, gt, None, LossWeights(lambda_dist=0.5))

    def test_report_json_stable(self):
        pts = cloud(5, 36)
        r = composite_loss(pts, pts)
        assert r.to_json() == r.to_json()
        assert b"slddt_score" in r.to_json()


class TestGradients:
    """Finite differences vs hand-derived analytic gradients.

    The aligner is treated as fixed during differentiation (stop-gradient
    through alignment).
    """

    STEP = 1e-5
    RTOL = 1e-4

    def _fd_grad(self, f, x):
        g = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            xp = x.copy()
            xm = x.copy()
            xp[idx] += self.STEP
            xm[idx] -= self.STEP
            g[idx] = (f(xp) - f(xm)) / (2 * self.STEP)
            it.iternext()
        return g

    def test_aligned_mse_gradient(self):
        rng = np.random.default_rng(37)
        gt = cloud(6, 38, spread=3.0)
        pred = gt + rng.normal(scale=0.4, size=gt.shape)
        rot, trans, _ = kabsch_align(gt, pred)
        aligned = gt @ rot.T + trans

        # analytic, aligner fixed
        grad = 2.0 * (pred - aligned) / (3.0 * len(pred))
        fd = self._fd_grad(
            lambda p: float(np.mean(((p - aligned) ** 2).sum(axis=1)) / 3.0),
            pred)
        np.testing.assert_allclose(grad, fd, rtol=self.RTOL, atol=1e-10)
        # and the fixed-alignment objective matches aligned_mse at the point
        assert aligned_mse(pred, gt) == pytest.approx(
            float(np.mean(((pred - aligned) ** 2).sum(axis=1)) / 3.0))

    def test_sldd_loss_gradient(self):
        rng = np.random.default_rng(39)
        gt = cloud(5, 40, spread=3.0)
        pred = gt + rng.normal(scale=0.3, size=gt.shape)

        breakdown = smooth_lddt(pred, gt)
        mask = breakdown.mask
        denom = mask.sum()
        # d loss / d delta = mean over thresholds of sigmoid'(t - delta) / denom
        sig_terms = sum(
            _d_sigmoid(t - breakdown.delta) for t in (0.5, 1.0, 2.0, 4.0)
        ) / 4.0
        ddelta = sig_terms * mask / denom  # d(-value)/d(delta) = +terms/denom
        sign = np.sign(breakdown.L - breakdown.L_gt)
        dl = ddelta * sign
        diff = pred[:, None, :] - pred[None, :, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(breakdown.L[..., None] > 0,
                            diff / breakdown.L[..., None], 0.0)
        grad = 2.0 * (dl[..., None] * unit).sum(axis=1)

        fd = self._fd_grad(lambda p: sldd_loss(p, gt), pred)
        np.testing.assert_allclose(grad, fd, rtol=self.RTOL, atol=1e-8)

    def test_distogram_gradient(self):
        rng = np.random.default_rng(41)
        gt = cloud(4, 42, spread=5.0)
        d = len(gt)
        logits = rng.normal(size=(d, d, 16))
        edges = default_distogram_edges(16)

        sym = 0.5 * (logits + logits.transpose(1, 0, 2))
        probs = np.exp(sym - sym.max(axis=2, keepdims=True))
        probs /= probs.sum(axis=2, keepdims=True)
        dist = np.linalg.norm(gt[:, None] - gt[None, :], axis=2)
        bins = np.searchsorted(edges, dist, side="right")
        onehot = np.zeros_like(probs)
        for i in range(d):
            for j in range(d):
                onehot[i, j, bins[i, j]] = 1.0
        off = (~np.eye(d, dtype=bool))[..., None]
        dsym = (probs - onehot) * off / off.sum()
        grad = 0.5 * (dsym + dsym.transpose(1, 0, 2))

        fd = self._fd_grad(lambda l: distogram_loss(l, gt, edges), logits)
        np.testing.assert_allclose(grad, fd, rtol=self.RTOL, atol=1e-8)


def _d_sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 - s)


class TestEdmWeight:
    def test_formula(self):
        assert edm_loss_weight(2.0, 4.0) == pytest.approx((4 + 16) / 64)

    def test_decreases_with_noise_to_a_floor(self):
        # 1/sigma^2 + 1/sigma_data^2: monotone in sigma with floor 1/sd^2
        w = [edm_loss_weight(s, 2.0) for s in (0.05, 1.0, 20.0, 200.0)]
        assert w == sorted(w, reverse=True)
        assert w[-1] == pytest.approx(0.25, rel=1e-2)
