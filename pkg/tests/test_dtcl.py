import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import brentq, minimize_scalar

import oracles
from rdbridge.cmaa import CmaaBlockParams
from rdbridge.dtcl import (
    DtclState, classification_loss, consistency_loss, cosine_matrix, cosine_sim, cross_entropy, cross_modal_loss,
    ema_update, hinge_from_similarity, make_teacher, total_loss,
)
from rdbridge.exceptions import ContractError, ShapeError
from rdbridge.numerics import Tensor, finite_diff_check, tsum
from rdbridge.params import named_tensors


def _sigma(*values, grad=False):
    return [Tensor(np.array(float(v)), requires_grad=grad) for v in values]


class TestCosine:
    def test_self(self, rng):
        x = rng.normal(size=5)
        assert cosine_sim(x, x).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 1.0])).item() == 0.0

    def test_forty_five_degrees(self):
        assert cosine_sim(np.array([1.0, 0.0]), np.array([1.0, 1.0])).item() == pytest.approx(0.70711, abs=1e-5)
        assert cosine_sim(np.array([1.0, 0.0]), np.array([1.0, 1.0])).item() == pytest.approx(1 / math.sqrt(2),
                                                                                            abs=1e-12)

    def test_zero_vector_is_guarded(self):
        assert cosine_sim(np.zeros(3), np.ones(3)).item() == 0.0

    def test_matrix_matches_scalar(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        np.testing.assert_allclose(cosine_matrix(a, b).data, oracles.similarity(a.tolist(), b.tolist()), atol=1e-12)


class TestCrossModal:
    def test_hand_worked_batch(self):
        S = np.array([[0.9, 0.8], [0.8, 0.9]])
        assert hinge_from_similarity(S, 0.2).item() == pytest.approx(0.4, abs=1e-9)

    def test_margin_satisfied(self):
        S = np.array([[1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
        assert hinge_from_similarity(S, 0.2).item() == 0.0

    def test_zero_margin_ordered(self, rng):
        S = rng.uniform(-1, 0.5, size=(4, 4))
        np.fill_diagonal(S, 0.9)
        assert hinge_from_similarity(S, 0.0).item() == 0.0

    def test_matches_loop_oracle(self, rng):
        S = rng.uniform(-1, 1, size=(5, 5))
        assert hinge_from_similarity(S, 0.3).item() == pytest.approx(oracles.hinge(S.tolist(), 0.3), abs=1e-12)

    def test_same_image_rows_are_not_negatives(self, rng):
        S = rng.uniform(-1, 1, size=(4, 4))
        groups = np.array([0, 0, 1, 2])
        got = hinge_from_similarity(S, 0.2, groups=groups).item()
        assert got == pytest.approx(oracles.hinge(S.tolist(), 0.2, groups.tolist()), abs=1e-12)

    def test_hardest_negative(self):
        S = np.array([[0.5, 0.6, 0.1], [0.0, 0.5, 0.2], [0.3, 0.0, 0.5]])
        # hardest caption per image row and hardest image per caption column
        want = sum(max(0.0, 0.2 - S[i, i] + max(S[i, j] for j in range(3) if j != i)) for i in range(3))
        want += sum(max(0.0, 0.2 - S[j, j] + max(S[i, j] for i in range(3) if i != j)) for j in range(3))
        assert hinge_from_similarity(S, 0.2, hardest=True).item() == pytest.approx(want, abs=1e-12)

    def test_batch_of_one_warns(self):
        with pytest.warns(RuntimeWarning, match="no negatives"):
            assert cross_modal_loss(np.ones((1, 3)), np.ones((1, 3))).item() == 0.0

    def test_non_square(self):
        with pytest.raises(ShapeError):
            hinge_from_similarity(np.ones((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, 4, elements=st.floats(0.1, 10.0)), arrays(np.float64, 4, elements=st.floats(0.1, 10.0)))
    def test_positive_rescaling_invariance(self, a, b):
        rng = np.random.default_rng(0)
        I, T = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        base = cross_modal_loss(I, T).item()
        # only the 1e-12 norm guard depends on scale
        assert cross_modal_loss(I * a[:, None], T * b[:, None]).item() == pytest.approx(base, rel=1e-9)

    def test_gradient_away_from_kinks(self, rng):
        T = rng.normal(size=(3, 4))
        err = finite_diff_check(lambda x: cross_modal_loss(x, T, margin=0.5), Tensor(rng.normal(size=(3, 4))))
        assert err < 1e-6


class TestClassification:
    def test_confident_correct(self):
        logits = np.array([[0.0, 800.0, 0.0]])
        assert classification_loss(logits, [1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_four_classes(self):
        assert classification_loss(np.zeros((3, 4)), [0, 1, 3]).item() == pytest.approx(1.38629, abs=1e-5)
        assert classification_loss(np.zeros((3, 4)), [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-9)

    def test_tower_average(self, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        y = [0, 2, 1, 1]
        want = 0.5 * (cross_entropy(a, y).item() + cross_entropy(b, y).item())
        assert classification_loss([a, b], y).item() == pytest.approx(want, abs=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
    def test_nonnegative(self, logits):
        assert classification_loss(logits, [0, 4, 2]).item() >= 0.0

    def test_label_out_of_range(self):
        with pytest.raises(ContractError):
            classification_loss(np.zeros((2, 3)), [0, 3])


class TestConsistency:
    def test_identical(self, rng):
        y = rng.normal(size=(3, 4))
        assert consistency_loss(y, y).item() == 0.0

    def test_mean_over_elements(self):
        assert consistency_loss(np.array([[1.0, 1.0]]), np.zeros((1, 2))).item() == 1.0

    def test_teacher_is_detached(self, rng):
        y = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        t = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        consistency_loss(y, t).backward()
        assert t.grad is None or not t.grad.any()
        np.testing.assert_allclose(y.grad, 2.0 * (y.data - t.data) / 6.0, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            consistency_loss(np.ones((2, 3)), np.ones((3, 2)))


class TestEma:
    @pytest.fixture
    def pair(self, rng):
        student = CmaaBlockParams.init(rng, 6, 4)
        for _, t in named_tensors(student):
            t.data[...] = rng.normal(size=t.shape)
        return make_teacher(student), student

    def test_decay_one_keeps_teacher(self, pair, rng):
        teacher, student = pair
        before = [t.data.copy() for _, t in named_tensors(teacher)]
        for _, s in named_tensors(student):
            s.data += 1.0
        ema_update(teacher, student, 1.0)
        for b, (_, t) in zip(before, named_tensors(teacher)):
            np.testing.assert_array_equal(t.data, b)

    def test_decay_zero_copies_student(self, pair):
        teacher, student = pair
        for _, s in named_tensors(student):
            s.data *= 3.0
        ema_update(teacher, student, 0.0)
        for (_, t), (_, s) in zip(named_tensors(teacher), named_tensors(student)):
            np.testing.assert_array_equal(t.data, s.data)

    def test_half(self):
        t, s = [Tensor(np.array([1.0]))], [Tensor(np.array([0.0]))]
        ema_update(t, s, 0.5)
        assert t[0].data[0] == 0.5

    def test_closed_form_after_many_steps(self):
        t, s = [Tensor(np.array([2.0, -1.0]))], [Tensor(np.array([0.3, 0.7]))]
        for _ in range(100):
            ema_update(t, s, 0.9)
        want = [oracles.ema_closed_form(2.0, 0.3, 0.9, 100), oracles.ema_closed_form(-1.0, 0.7, 0.9, 100)]
        np.testing.assert_allclose(t[0].data, want, atol=1e-12)

    def test_teacher_is_independent_and_frozen(self, pair):
        teacher, student = pair
        assert all(not t.requires_grad for _, t in named_tensors(teacher))
        assert all(t.data is not s.data for (_, t), (_, s) in zip(named_tensors(teacher), named_tensors(student)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ema_update([Tensor(np.zeros(2))], [Tensor(np.zeros(3))], 0.5)

    def test_bad_decay(self):
        with pytest.raises(ValueError):
            DtclState(ema_decay=1.5)


class TestTotalLoss:
    def test_zero_losses(self):
        assert total_loss([Tensor(0.0)] * 3, _sigma(1, 1, 1)).item() == pytest.approx(2.07944, abs=1e-5)
        assert total_loss([Tensor(0.0)] * 3, _sigma(1, 1, 1)).item() == pytest.approx(3 * math.log(2), abs=1e-9)

    def test_one_two_three(self):
        got = total_loss([Tensor(1.0), Tensor(2.0), Tensor(3.0)], _sigma(1, 1, 1)).item()
        assert got == pytest.approx(5.07944, abs=1e-5)
        assert got == pytest.approx(3 + 3 * math.log(2), abs=1e-9)

    def test_default_state_starts_at_one(self):
        assert [s.item() for s in DtclState().sigma] == [1.0, 1.0, 1.0]

    def test_disabled_terms_are_skipped(self):
        got = total_loss([None, Tensor(2.0), None], _sigma(1, 2, 1)).item()
        assert got == pytest.approx(2.0 / 8.0 + math.log(5.0), abs=1e-14)

    def test_all_disabled(self):
        with pytest.raises(ContractError):
            total_loss([None, None, None], _sigma(1, 1, 1))

    def test_sigma_gradient_formula(self):
        L = [0.7, 1.9, 0.2]
        s = _sigma(0.8, 1.3, 2.1, grad=True)
        total_loss([Tensor(v) for v in L], s).backward()
        for Li, si in zip(L, s):
            v = float(si.data)
            assert si.grad == pytest.approx(-Li / v ** 3 + 2 * v / (1 + v * v), abs=1e-12)

    def test_sigma_gradient_finite_diff(self):
        L = [Tensor(0.7), Tensor(1.9), Tensor(0.2)]
        err = finite_diff_check(lambda s: total_loss(L, s), Tensor(np.array([0.8, 1.3, 2.1])))
        assert err < 1e-6

    def test_monotone_in_each_loss(self, rng):
        s = _sigma(*rng.uniform(0.3, 2.0, size=3))
        base = [0.4, 0.9, 1.3]
        ref = total_loss([Tensor(v) for v in base], s).item()
        for i in range(3):
            bumped = list(base)
            bumped[i] += 0.5
            assert total_loss([Tensor(v) for v in bumped], s).item() >= ref

    @pytest.mark.parametrize("L", [0.05, 0.5, 1.0, 4.0, 20.0])
    def test_stationary_scale(self, L):
        # positive root of 2 s^4 - L (1 + s^2)
        root = brentq(lambda s: 2 * s ** 4 - L * (1 + s * s), 1e-6, 100.0, xtol=1e-14)
        found = minimize_scalar(lambda v: total_loss([Tensor(L)], _sigma(v)).item(), bounds=(1e-3, 50.0),
                                method="bounded", options={"xatol": 1e-10}).x
        assert found == pytest.approx(root, rel=1e-5)
        s = _sigma(root, grad=True)
        total_loss([Tensor(L)], s).backward()
        assert abs(float(s[0].grad)) < 1e-9

    def test_larger_loss_larger_scale(self):
        roots = [brentq(lambda s: 2 * s ** 4 - L * (1 + s * s), 1e-6, 100.0) for L in (0.1, 1.0, 10.0)]
        assert roots == sorted(roots) and len(set(roots)) == 3

    def test_too_many_losses(self):
        with pytest.raises(ShapeError):
            total_loss([Tensor(1.0)] * 4, _sigma(1, 1, 1))


def test_warning_free_for_normal_batches(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tsum(cross_modal_loss(rng.normal(size=(3, 2)), rng.normal(size=(3, 2))))
