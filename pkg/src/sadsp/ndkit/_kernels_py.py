"""Pure-Python compute kernels.

Reference implementation of the hot loops behind sadsp.ndkit.tensor. The
compiled twin in _kernels.pyx is built from the same loop nests with FP
contraction disabled, so both backends produce bit-identical doubles; the
parity tests rely on that. Buffers are flat row-major float64 sequences
(array('d') in practice). Matmul and *_acc kernels accumulate into their
output; plain forward kernels overwrite it.
"""

from math import exp as _exp
from math import log as _log
from math import sqrt as _sqrt

BACKEND = "python"


def matmul_nn(a, b, c, m, k, n):
    """c[m,n] += a[m,k] @ b[k,n]."""
    for i in range(m):
        ci = i * n
        ai = i * k
        for t in range(k):
            a_it = a[ai + t]
            bt = t * n
            for j in range(n):
                c[ci + j] += a_it * b[bt + j]


def matmul_nt(a, b, c, m, k, n):
    """c[m,n] += a[m,k] @ b[n,k]^T."""
    for i in range(m):
        ai = i * k
        ci = i * n
        for j in range(n):
            bj = j * k
            s = 0.0
            for t in range(k):
                s += a[ai + t] * b[bj + t]
            c[ci + j] += s


def matmul_tn(a, b, c, k, m, n):
    """c[m,n] += a[k,m]^T @ b[k,n]."""
    for t in range(k):
        at = t * m
        bt = t * n
        for i in range(m):
            a_ti = a[at + i]
            ci = i * n
            for j in range(n):
                c[ci + j] += a_ti * b[bt + j]


def ew_add(a, b, out, n):
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(a, b, out, n):
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(a, b, out, n):
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_neg(a, out, n):
    for i in range(n):
        out[i] = -a[i]


def rsub_scalar(c, a, out, n):
    """out = c - a."""
    for i in range(n):
        out[i] = c - a[i]


def scale(a, c, out, n):
    for i in range(n):
        out[i] = a[i] * c


def axpy(alpha, x, acc, n):
    """acc += alpha * x."""
    for i in range(n):
        acc[i] += alpha * x[i]


def madd(a, b, acc, n):
    """acc += a * b elementwise."""
    for i in range(n):
        acc[i] += a[i] * b[i]


def add_scalar_acc(s, acc, n):
    for i in range(n):
        acc[i] += s


def relu_fwd(x, out, n):
    for i in range(n):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(x, g, acc, n):
    # subgradient 0 at the kink
    for i in range(n):
        if x[i] > 0.0:
            acc[i] += g[i]


def sigmoid_fwd(x, out, n):
    # branch on sign so exp never overflows
    for i in range(n):
        v = x[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + _exp(-v))
        else:
            e = _exp(v)
            out[i] = e / (1.0 + e)


def sigmoid_bwd(y, g, acc, n):
    for i in range(n):
        yi = y[i]
        acc[i] += g[i] * yi * (1.0 - yi)


def log_fwd(x, out, n, lo):
    """out = log(max(x, lo)); lo keeps vanishing probabilities finite."""
    for i in range(n):
        v = x[i]
        if v < lo:
            v = lo
        out[i] = _log(v)


def log_bwd(x, g, acc, n, lo):
    # zero slope in the clamped region, matching the forward clamp
    for i in range(n):
        if x[i] >= lo:
            acc[i] += g[i] / x[i]


def softmax_rows(x, y, m, n):
    """Row-wise softmax with max subtraction."""
    for i in range(m):
        base = i * n
        mx = x[base]
        for j in range(1, n):
            v = x[base + j]
            if v > mx:
                mx = v
        s = 0.0
        for j in range(n):
            e = _exp(x[base + j] - mx)
            y[base + j] = e
            s += e
        inv = 1.0 / s
        for j in range(n):
            y[base + j] *= inv


def softmax_rows_bwd(y, g, acc, m, n):
    for i in range(m):
        base = i * n
        dot = 0.0
        for j in range(n):
            dot += g[base + j] * y[base + j]
        for j in range(n):
            acc[base + j] += y[base + j] * (g[base + j] - dot)


def add_bias(x, b, out, m, n):
    for i in range(m):
        base = i * n
        for j in range(n):
            out[base + j] = x[base + j] + b[j]


def col_sum_acc(g, acc, m, n):
    """acc[n] += column sums of g[m,n]."""
    for i in range(m):
        base = i * n
        for j in range(n):
            acc[j] += g[base + j]


def pick(x, idx, out, m, n):
    """out[i] = x[i, idx[i]]."""
    for i in range(m):
        out[i] = x[i * n + idx[i]]


def pick_acc(g, idx, acc, m, n):
    for i in range(m):
        acc[i * n + idx[i]] += g[i]


def copy_cols(x, out, m, n, start, width):
    """out[m,width] = x[:, start:start+width]."""
    for i in range(m):
        xb = i * n + start
        ob = i * width
        for j in range(width):
            out[ob + j] = x[xb + j]


def copy_cols_acc(g, acc, m, n, start, width):
    for i in range(m):
        ab = i * n + start
        gb = i * width
        for j in range(width):
            acc[ab + j] += g[gb + j]


def sum_all(a, n):
    s = 0.0
    for i in range(n):
        s += a[i]
    return s


def adam_step(p, g, m, v, t, lr, b1, b2, eps, wd, n):
    """One Adam update with decoupled weight decay (t counts from 1)."""
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        mhat = mi / bc1
        vhat = vi / bc2
        p[i] -= lr * (mhat / (_sqrt(vhat) + eps) + wd * p[i])
