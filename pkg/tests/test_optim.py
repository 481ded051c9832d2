"""Adam tests against closed-form edge cases and a high-precision reference."""

import pytest

import sadsp.ndkit as nd
from sadsp.errors import ContractError


def make_param(values):
    return nd.tensor(values, requires_grad=True)


def set_grad(p, g):
    from array import array

    p.grad = array("d", g)


def test_zero_grad_zero_decay_leaves_params():
    p = make_param([1.0, -2.0, 3.0])
    opt = nd.Adam([p], lr=0.1)
    set_grad(p, [0.0, 0.0, 0.0])
    opt.step()
    assert p.tolist() == [1.0, -2.0, 3.0]


def test_single_step_descends():
    p = make_param([1.0])
    opt = nd.Adam([p], lr=0.1)
    set_grad(p, [1.0])
    opt.step()
    assert p.values[0] < 1.0


def test_decoupled_decay_with_zero_grad():
    p = make_param([2.0])
    opt = nd.Adam([p], lr=0.1, weight_decay=0.5)
    set_grad(p, [0.0])
    opt.step()
    # pure decay: p -= lr * wd * p
    assert abs(p.values[0] - (2.0 - 0.1 * 0.5 * 2.0)) < 1e-15


def test_step_without_grad_raises():
    p = make_param([1.0])
    opt = nd.Adam([p], lr=0.1)
    with pytest.raises(ContractError):
        opt.step()


def test_three_steps_on_quadratic_vs_reference():
    """Reference Adam recomputed with mpmath at 50 digits (abs err < 1e-10)."""
    mpmath = pytest.importorskip("mpmath")
    mp = mpmath.mp
    mp.dps = 50

    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = make_param([0.0])
    opt = nd.Adam([p], lr=lr)

    rp = mpmath.mpf(0)
    rm = mpmath.mpf(0)
    rv = mpmath.mpf(0)
    for t in range(1, 4):
        g = 2.0 * (p.values[0] - 3.0)
        set_grad(p, [g])
        opt.step()

        rg = 2 * (rp - 3)
        rm = mpmath.mpf(b1) * rm + (1 - mpmath.mpf(b1)) * rg
        rv = mpmath.mpf(b2) * rv + (1 - mpmath.mpf(b2)) * rg * rg
        mhat = rm / (1 - mpmath.mpf(b1) ** t)
        vhat = rv / (1 - mpmath.mpf(b2) ** t)
        rp = rp - mpmath.mpf(lr) * mhat / (mpmath.sqrt(vhat) + mpmath.mpf(eps))

        assert abs(p.values[0] - float(rp)) < 1e-10


def test_determinism_bit_identical():
    def run():
        p = make_param([0.5, -1.0])
        opt = nd.Adam([p], lr=0.01, weight_decay=5e-5)
        for t in range(20):
            set_grad(p, [0.3 * (t % 3) - 0.1, -0.2 * (t % 5)])
            opt.step()
        return p.values.tobytes()

    assert run() == run()


def test_backward_then_step_reduces_simple_loss():
    p = nd.tensor([4.0], requires_grad=True)
    opt = nd.Adam([p], lr=0.05)
    last = None
    for _ in range(200):
        opt.zero_grad()
        diff = nd.sub(p, nd.tensor([3.0]))
        loss = nd.sum_all(nd.mul(diff, diff))
        nd.backward(loss)
        opt.step()
        last = loss.item()
    assert last < 0.05
