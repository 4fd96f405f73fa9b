import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corgi import tensorcore as tc
from corgi.gridbridge import GridGeometry, gather, kernel_weight, scatter, stencil
from corgi.tensorcore.gradcheck import gradient_errors

KINDS = ["ngp", "cic", "tsc"]


def geom(res, periodic=None, lo=None, hi=None):
    d = len(res)
    lo = [0.0] * d if lo is None else lo
    hi = [float(n) for n in res] if hi is None else hi
    return GridGeometry(tuple(res), tuple(lo), tuple(hi), tuple(periodic or [True] * d))


def test_cic_endpoints():
    assert kernel_weight("cic", 0.0) == 1.0
    assert kernel_weight("cic", 0.5) == 0.5
    assert kernel_weight("cic", 1.0) == 0.0


def test_tsc_values():
    assert kernel_weight("tsc", 0.0) == 0.75
    assert kernel_weight("tsc", 0.5) == 0.5
    assert kernel_weight("tsc", 1.5) == 0.0
    assert kernel_weight("tsc", -1.0) == pytest.approx(0.5 * 0.25)


def test_ngp_values_and_tie():
    assert kernel_weight("ngp", 0.49) == 1.0
    assert kernel_weight("ngp", 0.51) == 0.0
    assert kernel_weight("ngp", 0.5) == 1.0 and kernel_weight("ngp", -0.5) == 0.0


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown"):
        kernel_weight("spline", 0.0)


def test_cic_worked_example():
    g = scatter(np.array([[2.0]]), np.array([[1.2]]), geom([4], [False]), "cic")
    np.testing.assert_allclose(g.data[:, 0], [0.6, 1.4, 0.0, 0.0], atol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_cell_centre_puts_all_mass_in_cell(kind):
    g = scatter(np.array([[1.0]]), np.array([[2.5, 1.5]]), geom([4, 4]), kind)
    expected = np.zeros((4, 4))
    expected[2, 1] = 1.0 if kind != "tsc" else 0.75 ** 2
    if kind == "tsc":
        # TSC spreads to neighbours too; the centre cell still dominates
        assert g.data[2, 1, 0] == pytest.approx(0.5625) and g.data.sum() == pytest.approx(1.0)
    else:
        np.testing.assert_allclose(g.data[..., 0], expected, atol=1e-7)


@pytest.mark.parametrize("kind", ["cic", "tsc"])
def test_partition_of_unity(kind):
    rng = np.random.default_rng(0)
    pos = rng.uniform(2.0, 6.0, size=(50, 2))
    gm = geom([8, 8], [False, False])
    g = scatter(np.ones((50, 1)), pos, gm, kind)
    assert g.data.sum() == pytest.approx(50.0, rel=1e-6)
    vals = gather(np.full((8, 8, 1), 3.5), pos, gm, kind)
    np.testing.assert_allclose(vals.data, 3.5, rtol=1e-6)


@pytest.mark.parametrize("kind", ["cic", "tsc"])
def test_mass_conservation_periodic(kind):
    rng = np.random.default_rng(1)
    pos = rng.uniform(0, 1, size=(200, 3))
    h = rng.normal(size=(200, 4))
    g = scatter(h, pos, geom([4, 8, 2], lo=[0, 0, 0], hi=[1, 1, 1]), kind)
    np.testing.assert_allclose(g.data.reshape(-1, 4).sum(0), h.sum(0), rtol=1e-6, atol=1e-9)


def test_ngp_delta_round_trip():
    gm = geom([5, 5])
    h = np.array([[1.5, -2.0]])
    pos = np.array([[3.5, 0.5]])
    back = gather(scatter(h, pos, gm, "ngp"), pos, gm, "ngp")
    np.testing.assert_allclose(back.data, h)


def test_periodic_wrap_of_stencil():
    gm = geom([4], [True])
    idx, w = stencil(np.array([[0.2]]), gm, "cic")
    assert sorted(idx[0].tolist()) == [0, 3]
    np.testing.assert_allclose(w[0][np.argsort(idx[0])], [0.7, 0.3])


def test_bounded_drop_and_renormalize():
    gm = geom([4], [False])
    _, w = stencil(np.array([[0.2]]), gm, "cic")
    assert w.sum() == pytest.approx(0.7)
    _, w = stencil(np.array([[0.2]]), gm, "cic", renormalize=True)
    assert w.sum() == pytest.approx(1.0)


def test_nan_positions_rejected():
    with pytest.raises(ValueError):
        stencil(np.array([[np.nan, 0.0]]), geom([4, 4]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(KINDS), st.integers(1, 3), st.booleans())
def test_adjointness_float32(seed, kind, d, periodic):
    rng = np.random.default_rng(seed)
    res = tuple(int(v) for v in rng.integers(2, 7, size=d))
    gm = geom(res, [periodic] * d, lo=[0.0] * d, hi=[1.0] * d)
    pos = rng.uniform(0, 1, size=(25, d))
    h = rng.normal(size=(25, 3)).astype(np.float32)
    G = rng.normal(size=res + (3,)).astype(np.float32)
    lhs = float(np.sum(scatter(h, pos, gm, kind).data.astype(np.float64) * G))
    rhs = float(np.sum(h.astype(np.float64) * gather(G, pos, gm, kind).data))
    assert abs(lhs - rhs) <= 1e-5 * max(1.0, abs(lhs))


@pytest.mark.parametrize("kind", KINDS)
def test_bridge_gradients(kind):
    rng = np.random.default_rng(2)
    gm = geom([4, 3], [True, False], lo=[0, 0], hi=[1, 1])
    pos = rng.uniform(0, 1, size=(6, 2))
    h = tc.DiffTensor(rng.normal(size=(6, 2)), requires_grad=True)
    G = tc.DiffTensor(rng.normal(size=(4, 3, 2)), requires_grad=True)
    assert max(gradient_errors(lambda h: scatter(h, pos, gm, kind), [h])) < 1e-6
    assert max(gradient_errors(lambda G: gather(G, pos, gm, kind), [G])) < 1e-6


def test_brute_force_scatter_oracle_2d():
    rng = np.random.default_rng(3)
    gm = geom([5, 4], [True, False], lo=[-1.0, 0.0], hi=[1.5, 2.0])
    pos = rng.uniform([-1.0, 0.0], [1.5, 2.0], size=(10, 2))
    h = rng.normal(size=(10, 1))
    for kind in KINDS:
        out = scatter(h, pos, gm, kind).data[..., 0]
        cell = gm.cell_size
        ref = np.zeros((5, 4))
        for p in range(10):
            u = (pos[p] - np.array([-1.0, 0.0])) / cell
            for c0 in range(5):
                for c1 in range(4):
                    # periodic axis 0: nearest image of the offset
                    r0 = u[0] - c0 - 0.5
                    r0 = (r0 + 2.5) % 5 - 2.5
                    ref[c0, c1] += kernel_weight(kind, r0) * kernel_weight(kind, u[1] - c1 - 0.5) * h[p, 0]
        np.testing.assert_allclose(out, ref, atol=1e-12)
