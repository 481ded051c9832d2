"""Bit-parity between the compiled kernels and the pure-Python fallback."""

import random
from array import array

import pytest

from sadsp.ndkit import _kernels_py as kpy
from sadsp.ndkit import backend

kcy = pytest.importorskip("sadsp.ndkit._kernels", reason="compiled kernels not built")


def rnd(rng, n, lo=-2.0, hi=2.0):
    return array("d", (rng.uniform(lo, hi) for _ in range(n)))


def pair(buf):
    return array("d", buf), array("d", buf)


def test_backend_selected():
    assert backend.backend_name() in ("cython", "python")


@pytest.mark.parametrize("m,k,n", [(1, 1, 1), (3, 4, 2), (7, 5, 6)])
def test_matmul_parity(m, k, n):
    rng = random.Random(m * 100 + k * 10 + n)
    a = rnd(rng, m * k)
    b = rnd(rng, k * n)
    bt = rnd(rng, n * k)
    at = rnd(rng, k * m)
    c1, c2 = pair(rnd(rng, m * n))
    kpy.matmul_nn(a, b, c1, m, k, n)
    kcy.matmul_nn(a, b, c2, m, k, n)
    assert c1.tobytes() == c2.tobytes()
    c1, c2 = pair(rnd(rng, m * n))
    kpy.matmul_nt(a, bt, c1, m, k, n)
    kcy.matmul_nt(a, bt, c2, m, k, n)
    assert c1.tobytes() == c2.tobytes()
    c1, c2 = pair(rnd(rng, m * n))
    kpy.matmul_tn(at, b, c1, k, m, n)
    kcy.matmul_tn(at, b, c2, k, m, n)
    assert c1.tobytes() == c2.tobytes()


def test_elementwise_parity():
    rng = random.Random(42)
    n = 64
    a = rnd(rng, n)
    b = rnd(rng, n)
    for name in ("ew_add", "ew_sub", "ew_mul"):
        o1 = array("d", bytes(8 * n))
        o2 = array("d", bytes(8 * n))
        getattr(kpy, name)(a, b, o1, n)
        getattr(kcy, name)(a, b, o2, n)
        assert o1.tobytes() == o2.tobytes(), name
    for name in ("ew_neg", "relu_fwd"):
        o1 = array("d", bytes(8 * n))
        o2 = array("d", bytes(8 * n))
        getattr(kpy, name)(a, o1, n)
        getattr(kcy, name)(a, o2, n)
        assert o1.tobytes() == o2.tobytes(), name


def test_transcendental_parity():
    rng = random.Random(43)
    n = 64
    x = rnd(rng, n, -40.0, 40.0)
    o1 = array("d", bytes(8 * n))
    o2 = array("d", bytes(8 * n))
    kpy.sigmoid_fwd(x, o1, n)
    kcy.sigmoid_fwd(x, o2, n)
    assert o1.tobytes() == o2.tobytes()

    pos = rnd(rng, n, 0.0, 3.0)
    pos[0] = 0.0
    pos[1] = 1e-15
    kpy.log_fwd(pos, o1, n, 1e-12)
    kcy.log_fwd(pos, o2, n, 1e-12)
    assert o1.tobytes() == o2.tobytes()

    m = 8
    xm = rnd(rng, m * 8, -25.0, 25.0)
    s1 = array("d", bytes(8 * m * 8))
    s2 = array("d", bytes(8 * m * 8))
    kpy.softmax_rows(xm, s1, m, 8)
    kcy.softmax_rows(xm, s2, m, 8)
    assert s1.tobytes() == s2.tobytes()


def test_backward_kernel_parity():
    rng = random.Random(44)
    n = 48
    x = rnd(rng, n)
    g = rnd(rng, n)
    y = array("d", bytes(8 * n))
    kpy.sigmoid_fwd(x, y, n)
    a1, a2 = pair(rnd(rng, n))
    kpy.sigmoid_bwd(y, g, a1, n)
    kcy.sigmoid_bwd(y, g, a2, n)
    assert a1.tobytes() == a2.tobytes()

    a1, a2 = pair(rnd(rng, n))
    kpy.relu_bwd(x, g, a1, n)
    kcy.relu_bwd(x, g, a2, n)
    assert a1.tobytes() == a2.tobytes()

    pos = rnd(rng, n, 1e-13, 2.0)
    a1, a2 = pair(rnd(rng, n))
    kpy.log_bwd(pos, g, a1, n, 1e-12)
    kcy.log_bwd(pos, g, a2, n, 1e-12)
    assert a1.tobytes() == a2.tobytes()

    m, cols = 6, 8
    sm = array("d", bytes(8 * m * cols))
    kpy.softmax_rows(rnd(rng, m * cols), sm, m, cols)
    gm = rnd(rng, m * cols)
    a1, a2 = pair(rnd(rng, m * cols))
    kpy.softmax_rows_bwd(sm, gm, a1, m, cols)
    kcy.softmax_rows_bwd(sm, gm, a2, m, cols)
    assert a1.tobytes() == a2.tobytes()


def test_small_helpers_parity():
    rng = random.Random(45)
    n = 40
    a = rnd(rng, n)
    b = rnd(rng, n)
    for run in (
        lambda k, o: k.rsub_scalar(1.0, a, o, n),
        lambda k, o: k.scale(a, -0.37, o, n),
        lambda k, o: k.axpy(0.77, a, o, n),
        lambda k, o: k.madd(a, b, o, n),
        lambda k, o: k.add_scalar_acc(0.33, o, n),
    ):
        o1, o2 = pair(rnd(rng, n))
        run(kpy, o1)
        run(kcy, o2)
        assert o1.tobytes() == o2.tobytes()

    m, cols = 5, 8
    x = rnd(rng, m * cols)
    bias = rnd(rng, cols)
    o1 = array("d", bytes(8 * m * cols))
    o2 = array("d", bytes(8 * m * cols))
    kpy.add_bias(x, bias, o1, m, cols)
    kcy.add_bias(x, bias, o2, m, cols)
    assert o1.tobytes() == o2.tobytes()

    g1, g2 = pair(rnd(rng, cols))
    kpy.col_sum_acc(x, g1, m, cols)
    kcy.col_sum_acc(x, g2, m, cols)
    assert g1.tobytes() == g2.tobytes()

    idx = array("q", [rng.randrange(cols) for _ in range(m)])
    p1 = array("d", bytes(8 * m))
    p2 = array("d", bytes(8 * m))
    kpy.pick(x, idx, p1, m, cols)
    kcy.pick(x, idx, p2, m, cols)
    assert p1.tobytes() == p2.tobytes()

    gv = rnd(rng, m)
    a1, a2 = pair(rnd(rng, m * cols))
    kpy.pick_acc(gv, idx, a1, m, cols)
    kcy.pick_acc(gv, idx, a2, m, cols)
    assert a1.tobytes() == a2.tobytes()

    w = 3
    s1 = array("d", bytes(8 * m * w))
    s2 = array("d", bytes(8 * m * w))
    kpy.copy_cols(x, s1, m, cols, 2, w)
    kcy.copy_cols(x, s2, m, cols, 2, w)
    assert s1.tobytes() == s2.tobytes()

    gw = rnd(rng, m * w)
    a1, a2 = pair(rnd(rng, m * cols))
    kpy.copy_cols_acc(gw, a1, m, cols, 2, w)
    kcy.copy_cols_acc(gw, a2, m, cols, 2, w)
    assert a1.tobytes() == a2.tobytes()

    assert kpy.sum_all(a, n) == kcy.sum_all(a, n)


def test_adam_step_parity():
    rng = random.Random(46)
    n = 32
    p1, p2 = pair(rnd(rng, n))
    g = rnd(rng, n)
    m1, m2 = pair(rnd(rng, n, -0.1, 0.1))
    v1, v2 = pair(rnd(rng, n, 0.0, 0.1))
    for t in (1, 2, 7):
        kpy.adam_step(p1, g, m1, v1, t, 1e-2, 0.9, 0.999, 1e-8, 5e-5, n)
        kcy.adam_step(p2, g, m2, v2, t, 1e-2, 0.9, 0.999, 1e-8, 5e-5, n)
        assert p1.tobytes() == p2.tobytes()
        assert m1.tobytes() == m2.tobytes()
        assert v1.tobytes() == v2.tobytes()
