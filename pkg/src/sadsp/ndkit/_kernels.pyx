# cython: language_level=3
"""Compiled compute kernels.

Same loop nests as _kernels_py.py, compiled with -ffp-contract=off so the
two backends agree bit-for-bit on float64. Keep both files in lockstep; the
parity tests in tests/test_kernels.py enforce the agreement.
"""

from libc.math cimport exp, log, pow, sqrt

BACKEND = "cython"


def matmul_nn(double[::1] a, double[::1] b, double[::1] c, int m, int k, int n):
    """c[m,n] += a[m,k] @ b[k,n]."""
    cdef int i, j, t, ci, ai, bt
    cdef double a_it
    for i in range(m):
        ci = i * n
        ai = i * k
        for t in range(k):
            a_it = a[ai + t]
            bt = t * n
            for j in range(n):
                c[ci + j] += a_it * b[bt + j]


def matmul_nt(double[::1] a, double[::1] b, double[::1] c, int m, int k, int n):
    """c[m,n] += a[m,k] @ b[n,k]^T."""
    cdef int i, j, t, ai, ci, bj
    cdef double s
    for i in range(m):
        ai = i * k
        ci = i * n
        for j in range(n):
            bj = j * k
            s = 0.0
            for t in range(k):
                s += a[ai + t] * b[bj + t]
            c[ci + j] += s


def matmul_tn(double[::1] a, double[::1] b, double[::1] c, int k, int m, int n):
    """c[m,n] += a[k,m]^T @ b[k,n]."""
    cdef int i, j, t, at, bt, ci
    cdef double a_ti
    for t in range(k):
        at = t * m
        bt = t * n
        for i in range(m):
            a_ti = a[at + i]
            ci = i * n
            for j in range(n):
                c[ci + j] += a_ti * b[bt + j]


def ew_add(double[::1] a, double[::1] b, double[::1] out, int n):
    cdef int i
    for i in range(n):
        out[i] = a[i] + b[i]


def ew_sub(double[::1] a, double[::1] b, double[::1] out, int n):
    cdef int i
    for i in range(n):
        out[i] = a[i] - b[i]


def ew_mul(double[::1] a, double[::1] b, double[::1] out, int n):
    cdef int i
    for i in range(n):
        out[i] = a[i] * b[i]


def ew_neg(double[::1] a, double[::1] out, int n):
    cdef int i
    for i in range(n):
        out[i] = -a[i]


def rsub_scalar(double c, double[::1] a, double[::1] out, int n):
    """out = c - a."""
    cdef int i
    for i in range(n):
        out[i] = c - a[i]


def scale(double[::1] a, double c, double[::1] out, int n):
    cdef int i
    for i in range(n):
        out[i] = a[i] * c


def axpy(double alpha, double[::1] x, double[::1] acc, int n):
    """acc += alpha * x."""
    cdef int i
    for i in range(n):
        acc[i] += alpha * x[i]


def madd(double[::1] a, double[::1] b, double[::1] acc, int n):
    """acc += a * b elementwise."""
    cdef int i
    for i in range(n):
        acc[i] += a[i] * b[i]


def add_scalar_acc(double s, double[::1] acc, int n):
    cdef int i
    for i in range(n):
        acc[i] += s


def relu_fwd(double[::1] x, double[::1] out, int n):
    cdef int i
    cdef double v
    for i in range(n):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(double[::1] x, double[::1] g, double[::1] acc, int n):
    # subgradient 0 at the kink
    cdef int i
    for i in range(n):
        if x[i] > 0.0:
            acc[i] += g[i]


def sigmoid_fwd(double[::1] x, double[::1] out, int n):
    # branch on sign so exp never overflows
    cdef int i
    cdef double v, e
    for i in range(n):
        v = x[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + exp(-v))
        else:
            e = exp(v)
            out[i] = e / (1.0 + e)


def sigmoid_bwd(double[::1] y, double[::1] g, double[::1] acc, int n):
    cdef int i
    cdef double yi
    for i in range(n):
        yi = y[i]
        acc[i] += g[i] * yi * (1.0 - yi)


def log_fwd(double[::1] x, double[::1] out, int n, double lo):
    """out = log(max(x, lo)); lo keeps vanishing probabilities finite."""
    cdef int i
    cdef double v
    for i in range(n):
        v = x[i]
        if v < lo:
            v = lo
        out[i] = log(v)


def log_bwd(double[::1] x, double[::1] g, double[::1] acc, int n, double lo):
    # zero slope in the clamped region, matching the forward clamp
    cdef int i
    for i in range(n):
        if x[i] >= lo:
            acc[i] += g[i] / x[i]


def softmax_rows(double[::1] x, double[::1] y, int m, int n):
    """Row-wise softmax with max subtraction."""
    cdef int i, j, base
    cdef double mx, s, e, v, inv
    for i in range(m):
        base = i * n
        mx = x[base]
        for j in range(1, n):
            v = x[base + j]
            if v > mx:
                mx = v
        s = 0.0
        for j in range(n):
            e = exp(x[base + j] - mx)
            y[base + j] = e
            s += e
        inv = 1.0 / s
        for j in range(n):
            y[base + j] *= inv


def softmax_rows_bwd(double[::1] y, double[::1] g, double[::1] acc, int m, int n):
    cdef int i, j, base
    cdef double dot
    for i in range(m):
        base = i * n
        dot = 0.0
        for j in range(n):
            dot += g[base + j] * y[base + j]
        for j in range(n):
            acc[base + j] += y[base + j] * (g[base + j] - dot)


def add_bias(double[::1] x, double[::1] b, double[::1] out, int m, int n):
    cdef int i, j, base
    for i in range(m):
        base = i * n
        for j in range(n):
            out[base + j] = x[base + j] + b[j]


def col_sum_acc(double[::1] g, double[::1] acc, int m, int n):
    """acc[n] += column sums of g[m,n]."""
    cdef int i, j, base
    for i in range(m):
        base = i * n
        for j in range(n):
            acc[j] += g[base + j]


def pick(double[::1] x, long long[::1] idx, double[::1] out, int m, int n):
    """out[i] = x[i, idx[i]]."""
    cdef int i
    for i in range(m):
        out[i] = x[i * n + idx[i]]


def pick_acc(double[::1] g, long long[::1] idx, double[::1] acc, int m, int n):
    cdef int i
    for i in range(m):
        acc[i * n + idx[i]] += g[i]


def copy_cols(double[::1] x, double[::1] out, int m, int n, int start, int width):
    """out[m,width] = x[:, start:start+width]."""
    cdef int i, j, xb, ob
    for i in range(m):
        xb = i * n + start
        ob = i * width
        for j in range(width):
            out[ob + j] = x[xb + j]


def copy_cols_acc(double[::1] g, double[::1] acc, int m, int n, int start, int width):
    cdef int i, j, ab, gb
    for i in range(m):
        ab = i * n + start
        gb = i * width
        for j in range(width):
            acc[ab + j] += g[gb + j]


def sum_all(double[::1] a, int n):
    cdef int i
    cdef double s = 0.0
    for i in range(n):
        s += a[i]
    return s


def adam_step(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
              int t, double lr, double b1, double b2, double eps, double wd, int n):
    """One Adam update with decoupled weight decay (t counts from 1)."""
    cdef int i
    cdef double bc1 = 1.0 - pow(b1, <double> t)
    cdef double bc2 = 1.0 - pow(b2, <double> t)
    cdef double gi, mi, vi, mhat, vhat
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        mhat = mi / bc1
        vhat = vi / bc2
        p[i] -= lr * (mhat / (sqrt(vhat) + eps) + wd * p[i])
