import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtgat import autodiff as ad


def central_diff(fn, x, step=1e-5):
    """Independent numeric gradient of a scalar numpy function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = fn(x)
        x[idx] = orig - step
        down = fn(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def grad_of(build, **arrays):
    tape = ad.Tape()
    ts = {k: tape.param(v, k) for k, v in arrays.items()}
    loss = build(**ts)
    return ad.backward(tape, loss)


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


# -- forward examples -------------------------------------------------------

def test_matmul_identity_and_values():
    x = np.array([[1.5, -2.0], [0.25, 4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), x).data, x)
    assert ad.matmul([[1, 2], [3, 4]], [[1], [1]]).data.tolist() == [[3], [7]]
    with pytest.raises(ad.ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_add_and_row_broadcast():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.add(a, np.zeros((2, 2))).data, a)
    assert ad.add_row([[1, 1], [2, 2]], [1, 2]).data.tolist() == [[2, 3], [3, 4]]
    with pytest.raises(ad.ShapeError):
        ad.add_row(a, [1, 2, 3])
    with pytest.raises(ad.ShapeError):
        ad.add(a, np.ones((2, 3)))


def test_leaky_relu_values_and_gradient():
    assert ad.leaky_relu([[3.0]]).item() == 3.0
    assert ad.leaky_relu([[-1.0]], 0.2).item() == pytest.approx(-0.2)
    g = grad_of(lambda x: ad.sum_all(ad.leaky_relu(x, 0.2)), x=[[-1.0]])
    assert g["x"][0, 0] == pytest.approx(0.2)


def test_segment_softmax_examples():
    assert ad.segment_softmax([[7.3]], [0]).item() == 1.0
    np.testing.assert_allclose(ad.segment_softmax([[0.0], [0.0]], [0, 0]).data[:, 0], [0.5, 0.5])
    e3, e5 = math.exp(3), math.exp(5)
    out = ad.segment_softmax([[3.0], [5.0]], [0, 0]).data[:, 0]
    np.testing.assert_allclose(out, [e3 / (e3 + e5), e5 / (e3 + e5)], rtol=1e-14)
    np.testing.assert_allclose(out, [0.1192, 0.8808], atol=1e-4)


def test_segment_softmax_large_scores_stable():
    out = ad.segment_softmax([[1000.0], [1001.0], [-1000.0]], [0, 0, 1]).data[:, 0]
    assert np.all(np.isfinite(out))
    assert out[2] == 1.0


def test_segment_weighted_sum_examples():
    v = np.array([[1.0, -2.0, 0.5]])
    assert np.array_equal(ad.segment_weighted_sum([[1.0]], v, [0]).data, v)
    out = ad.segment_weighted_sum([[0.1192], [0.8808]], [[1.0], [3.0]], [0, 0]).item()
    assert out == pytest.approx(0.1192 * 1 + 0.8808 * 3)
    assert out == pytest.approx(2.7616, abs=1e-12)


def test_segment_weighted_sum_empty_segment():
    out = ad.segment_weighted_sum([[1.0], [1.0]], [[2.0], [3.0]], [0, 2], 3).data
    assert out.tolist() == [[2.0], [0.0], [3.0]]
    assert ad.isolated_segments([0, 2], 3).tolist() == [False, True, False]


def test_concat_and_mean():
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(ad.concat_cols([x]).data, x)
    assert ad.concat_cols([x, np.ones((3, 3))]).shape == (3, 5)
    with pytest.raises(ad.ShapeError):
        ad.concat_cols([x, np.ones((2, 3))])
    assert ad.mean_rows([[1.0, 2.0]]).data.tolist() == [[1.0, 2.0]]
    assert ad.mean_rows([[1.0, 2.0], [3.0, 4.0]]).data.tolist() == [[2.0, 3.0]]
    with pytest.raises(ad.ShapeError):
        ad.mean_rows(np.zeros((0, 2)))


def test_l1_loss():
    assert ad.l1_loss([[1.0]], [[1.0]]).item() == 0.0
    assert ad.l1_loss([[1.5]], [[1.0]]).item() == 0.5
    for p, expected in ((1.5, 1.0), (0.5, -1.0), (1.0, 0.0)):
        g = grad_of(lambda p: ad.l1_loss(p, np.array([[1.0]])), p=[[p]])
        assert g["p"][0, 0] == expected


def test_bce_with_logits():
    assert ad.bce_with_logits([[0.0]], [[1]]).item() == pytest.approx(math.log(2), abs=1e-12)
    hi = ad.bce_with_logits([[20.0]], [[1]]).item()
    assert 0 <= hi < 1e-8
    # log(1 + e^20) computed through the stable form
    lo = ad.bce_with_logits([[-20.0]], [[1]]).item()
    assert lo == pytest.approx(20 + math.log1p(math.exp(-20)), rel=1e-15)
    assert math.isfinite(ad.bce_with_logits([[-800.0]], [[1]]).item())


# -- backward ---------------------------------------------------------------

def test_backward_sum_is_ones():
    g = grad_of(lambda p: ad.sum_all(p), p=np.arange(6.0).reshape(2, 3))
    assert np.array_equal(g["p"], np.ones((2, 3)))


def test_untouched_parameter_gets_zero_gradient():
    tape = ad.Tape()
    p = tape.param(np.ones((2, 2)), "p")
    q = tape.param(np.ones((1, 3)), "q")
    g = ad.backward(tape, ad.sum_all(p))
    assert np.array_equal(g["q"], np.zeros((1, 3)))


def test_backward_rejects_non_scalar():
    tape = ad.Tape()
    p = tape.param(np.ones((2, 2)), "p")
    with pytest.raises(ad.ShapeError):
        ad.backward(tape, ad.add(p, p))


def test_nan_trips_error():
    tape = ad.Tape()
    p = tape.param([[1.0]], "p")
    with pytest.raises(ad.NumericalError):
        ad.matmul(p, [[np.inf]])
    with pytest.raises(ad.NumericalError):
        tape.param([[np.nan]], "bad")


def test_l1_of_matmul_matches_central_differences():
    rng = np.random.default_rng(0)
    M0, x, t = rng.normal(size=(3, 4)), rng.normal(size=(4, 1)), rng.normal(size=(3, 1))
    g = grad_of(lambda M: ad.l1_loss(ad.matmul(M, x), t), M=M0)["M"]
    num = central_diff(lambda M: np.abs(M @ x - t).mean(), M0)
    assert rel_err(g, num) < 1e-6


def test_commuted_branches_same_gradients():
    rng = np.random.default_rng(1)
    P, Q = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    def build(order):
        tape = ad.Tape()
        p, q = tape.param(P, "p"), tape.param(Q, "q")
        branches = {}
        for key in order:
            if key == "a":
                branches[key] = ad.matmul(p, q)
            else:
                branches[key] = ad.leaky_relu(ad.add(p, q))
        loss = ad.sum_all(ad.add(branches["a"], branches["b"]))
        return ad.backward(tape, loss)

    g1, g2 = build("ab"), build("ba")
    for k in ("p", "q"):
        assert np.array_equal(g1[k], g2[k])


def test_deterministic_outputs():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(50, 3))
    seg = rng.integers(0, 7, size=50)
    a = ad.segment_softmax(s, seg, 7).data
    b = ad.segment_softmax(s.copy(), seg.copy(), 7).data
    assert a.tobytes() == b.tobytes()


# -- per-primitive gradient checks against an independent numpy oracle -------

rng0 = np.random.default_rng(42)
SEG = np.array([0, 0, 2, 1, 2, 2, 0, 1])


def away_from_zero(shape, rng):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 1e-3, 0.5, x)


CASES = {
    "matmul": (lambda a, b: ad.sum_all(ad.matmul(a, b)), lambda a, b: (a @ b).sum(),
               lambda r: dict(a=r.normal(size=(3, 4)), b=r.normal(size=(4, 2)))),
    "add_row": (lambda a, b: ad.sum_all(ad.rowwise_dot(ad.add_row(a, b), ad.add_row(a, b))),
                lambda a, b: ((a + b) ** 2).sum(),
                lambda r: dict(a=r.normal(size=(3, 2)), b=r.normal(size=(1, 2)))),
    "leaky_relu": (lambda x: ad.sum_all(ad.matmul(ad.leaky_relu(x, 0.2), np.arange(1.0, 4.0)[:, None])),
                   lambda x: (np.where(x > 0, x, 0.2 * x) @ np.arange(1.0, 4.0)[:, None]).sum(),
                   lambda r: dict(x=away_from_zero((2, 3), r))),
    "segment_softmax": (lambda s: ad.sum_all(ad.matmul(ad.transpose(ad.segment_softmax(s, SEG, 3)),
                                                       np.arange(8.0)[:, None])),
                        lambda s: sum(np.exp(s[SEG == k, 0] - s[SEG == k, 0].max())
                                      @ np.arange(8.0)[SEG == k] / np.exp(s[SEG == k, 0] - s[SEG == k, 0].max()).sum()
                                      for k in range(3)),
                        lambda r: dict(s=r.normal(size=(8, 1)))),
    "segment_weighted_sum": (
        lambda w, v: ad.sum_all(ad.rowwise_dot(ad.segment_weighted_sum(w, v, SEG, 4),
                                               np.arange(8.0).reshape(4, 2))),
        lambda w, v: sum((w[e, 0] * v[e]) @ np.arange(8.0).reshape(4, 2)[SEG[e]] for e in range(8)),
        lambda r: dict(w=r.normal(size=(8, 1)), v=r.normal(size=(8, 2)))),
    "segment_weighted_sum_heads": (
        lambda w, v: ad.sum_all(ad.rowwise_dot(ad.segment_weighted_sum(w, v, SEG, 3),
                                               np.arange(12.0).reshape(3, 4))),
        lambda w, v: sum(np.concatenate([w[e, 0] * v[e, :2], w[e, 1] * v[e, 2:]]) @ np.arange(12.0).reshape(3, 4)[SEG[e]]
                         for e in range(8)),
        lambda r: dict(w=r.normal(size=(8, 2)), v=r.normal(size=(8, 4)))),
    "concat_cols": (lambda a, b: ad.sum_all(ad.matmul(ad.concat_cols([a, b]), np.arange(5.0)[:, None])),
                    lambda a, b: (np.concatenate([a, b], 1) @ np.arange(5.0)[:, None]).sum(),
                    lambda r: dict(a=r.normal(size=(3, 2)), b=r.normal(size=(3, 3)))),
    "concat_rows": (lambda a, b: ad.sum_all(ad.matmul(ad.concat_rows([a, b]), np.arange(2.0)[:, None])),
                    lambda a, b: (np.concatenate([a, b], 0) @ np.arange(2.0)[:, None]).sum(),
                    lambda r: dict(a=r.normal(size=(3, 2)), b=r.normal(size=(1, 2)))),
    "mean_rows": (lambda x: ad.sum_all(ad.leaky_relu(ad.mean_rows(x), 0.3)),
                  lambda x: np.where(x.mean(0) > 0, x.mean(0), 0.3 * x.mean(0)).sum(),
                  lambda r: dict(x=r.normal(size=(4, 3)) + 2.0)),
    "gather_rows": (lambda x: ad.sum_all(ad.matmul(ad.gather_rows(x, [2, 0, 2, 1]), np.ones((2, 1)) * 3)),
                    lambda x: (x[[2, 0, 2, 1]] @ (np.ones((2, 1)) * 3)).sum(),
                    lambda r: dict(x=r.normal(size=(3, 2)))),
    "gather_elements": (lambda x: ad.sum_all(ad.matmul(ad.gather_elements(x, [[0, 2], [1, 1]], [[1, 0], [1, 1]]),
                                                       np.array([[1.0], [2.0]]))),
                        lambda x: (x[[[0, 2], [1, 1]], [[1, 0], [1, 1]]] @ np.array([[1.0], [2.0]])).sum(),
                        lambda r: dict(x=r.normal(size=(3, 2)))),
    "slice_transpose": (lambda x: ad.sum_all(ad.matmul(ad.transpose(ad.slice_cols(x, 1, 3)), np.ones((4, 1)))),
                        lambda x: (x[:, 1:3].T @ np.ones((4, 1))).sum(),
                        lambda r: dict(x=r.normal(size=(4, 3)))),
    "l1_loss": (lambda p: ad.l1_loss(p, np.zeros((1, 3))), lambda p: np.abs(p).mean(),
                lambda r: dict(p=away_from_zero((1, 3), r))),
    "bce_with_logits": (lambda z: ad.bce_with_logits(z, [[1, 0, 1]]),
                        lambda z: float(np.sum(np.log1p(np.exp(-z[0] * np.array([1, -1, 1]))))),
                        lambda r: dict(z=r.normal(size=(1, 3)) * 3)),
}


@pytest.mark.parametrize("name", sorted(CASES))
@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_primitive_gradients_vs_central_differences(name, seed):
    build, numeric, make = CASES[name]
    arrays = make(np.random.default_rng(seed))
    g = grad_of(build, **arrays)
    for k, x in arrays.items():
        others = {j: v for j, v in arrays.items() if j != k}
        num = central_diff(lambda val: numeric(**{k: val}, **others), x)
        assert rel_err(g[k], num) < 1e-6, (name, k)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 3), st.integers(0, 10_000))
def test_segment_softmax_sums_to_one(n_entries, n_seg, cols, seed):
    r = np.random.default_rng(seed)
    seg = r.integers(0, n_seg, size=n_entries)
    y = ad.segment_softmax(r.normal(size=(n_entries, cols)) * 5, seg, n_seg).data
    assert np.all(y > 0)
    for k in np.unique(seg):
        np.testing.assert_allclose(y[seg == k].sum(axis=0), 1.0, atol=1e-12)


# -- finite-difference harness ----------------------------------------------

def test_fd_check_quadratic():
    rep = ad.finite_diff_check(lambda tape, t: ad.sum_all(ad.rowwise_dot(t["p"], t["p"])),
                               {"p": np.array([[3.0]])}, tolerance=1e-9)
    assert rep.passed
    assert rep.analytic["p"][0, 0] == 6.0
    assert abs(rep.numeric["p"][0, 0] - 6.0) < 1e-9


def test_fd_check_zero_tolerance_reports_failure():
    rep = ad.finite_diff_check(lambda tape, t: ad.sum_all(ad.leaky_relu(ad.matmul(t["a"], t["a"]))),
                               {"a": np.array([[0.3, -0.7], [1.1, 0.4]])}, tolerance=0.0)
    assert not rep.passed
    assert rep.max_rel_error > 0
    assert rep.worst is not None
