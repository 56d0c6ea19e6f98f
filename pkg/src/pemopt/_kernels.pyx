# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-component kernels over a flat product layout.

Layout arrays (all ``intp``): ``kinds`` (0 Euclidean, 1 Sphere, 2 Oblique,
3 Stiefel), ``offsets``, ``rows``, ``cols``. Component ``i`` occupies
``point[offsets[i] : offsets[i] + rows[i]*cols[i]]`` as a row-major matrix.
Mirrors ``_kernels_py`` entry point for entry point.
"""
from libc.math cimport sqrt, fabs, isfinite
from libc.stdlib cimport malloc, free

cdef double DEGENERATE_RTOL = 1e-12


cdef double _project_one(Py_ssize_t kind, Py_ssize_t a, Py_ssize_t b,
                         const double* p, const double* amb, double* out,
                         double* work) nogil:
    cdef Py_ssize_t i, j, k, n = a * b
    cdef double s, acc = 0.0
    if kind == 0:
        for i in range(n):
            out[i] = amb[i]
    elif kind == 1:
        s = 0.0
        for i in range(n):
            s += amb[i] * p[i]
        for i in range(n):
            out[i] = amb[i] - s * p[i]
    elif kind == 2:
        for j in range(b):
            s = 0.0
            for i in range(a):
                s += p[i * b + j] * amb[i * b + j]
            for i in range(a):
                out[i * b + j] = amb[i * b + j] - s * p[i * b + j]
    else:
        # work[j*b + k] = (p^T amb)[j, k]
        for j in range(b):
            for k in range(b):
                s = 0.0
                for i in range(a):
                    s += p[i * b + j] * amb[i * b + k]
                work[j * b + k] = s
        for j in range(b):
            for k in range(j + 1, b):
                s = 0.5 * (work[j * b + k] + work[k * b + j])
                work[j * b + k] = s
                work[k * b + j] = s
        for i in range(a):
            for k in range(b):
                s = 0.0
                for j in range(b):
                    s += p[i * b + j] * work[j * b + k]
                out[i * b + k] = amb[i * b + k] - s
    for i in range(n):
        acc += out[i] * out[i]
    return acc


cdef int _retract_one(Py_ssize_t kind, Py_ssize_t a, Py_ssize_t b,
                      const double* p, const double* t, double alpha,
                      double* out) nogil:
    """Returns 0 on success, 1 if degenerate."""
    cdef Py_ssize_t i, j, k, n = a * b, sweep
    cdef double s, r, scale
    cdef bint moved = 0
    for i in range(n):
        out[i] = p[i] + alpha * t[i]
        if alpha * t[i] != 0.0:
            moved = 1
    # a zero step keeps the point bit-for-bit (R_p(0) = p)
    if kind == 0 or not moved:
        return 0
    if kind == 1:
        s = 0.0
        for i in range(n):
            s += out[i] * out[i]
        s = sqrt(s)
        if not (isfinite(s) and s > 0.0):
            return 1
        for i in range(n):
            out[i] = out[i] / s
        return 0
    if kind == 2:
        for j in range(b):
            s = 0.0
            for i in range(a):
                s += out[i * b + j] * out[i * b + j]
            s = sqrt(s)
            if not (isfinite(s) and s > 0.0):
                return 1
            for i in range(a):
                out[i * b + j] = out[i * b + j] / s
        return 0
    # Stiefel: modified Gram-Schmidt with one re-orthogonalisation sweep,
    # which yields the Q factor whose R has a positive diagonal.
    scale = 0.0
    for j in range(b):
        s = 0.0
        for i in range(a):
            s += out[i * b + j] * out[i * b + j]
        if s > scale:
            scale = s
    scale = sqrt(scale)
    if not (isfinite(scale) and scale > 0.0):
        return 1
    for j in range(b):
        for sweep in range(2):
            for k in range(j):
                r = 0.0
                for i in range(a):
                    r += out[i * b + k] * out[i * b + j]
                for i in range(a):
                    out[i * b + j] -= r * out[i * b + k]
        s = 0.0
        for i in range(a):
            s += out[i * b + j] * out[i * b + j]
        s = sqrt(s)
        if not (isfinite(s) and s > DEGENERATE_RTOL * scale):
            return 1
        for i in range(a):
            out[i * b + j] = out[i * b + j] / s
    return 0


cdef double _residual_one(Py_ssize_t kind, Py_ssize_t a, Py_ssize_t b,
                          const double* p) nogil:
    cdef Py_ssize_t i, j, k, n = a * b
    cdef double s, worst = 0.0
    if kind == 0:
        return 0.0
    if kind == 1:
        s = 0.0
        for i in range(n):
            s += p[i] * p[i]
        return fabs(sqrt(s) - 1.0)
    if kind == 2:
        for j in range(b):
            s = 0.0
            for i in range(a):
                s += p[i * b + j] * p[i * b + j]
            s = fabs(sqrt(s) - 1.0)
            if not s <= worst:
                worst = s
        return worst
    for j in range(b):
        for k in range(b):
            s = 0.0
            for i in range(a):
                s += p[i * b + j] * p[i * b + k]
            if j == k:
                s -= 1.0
            s = fabs(s)
            if not s <= worst:
                worst = s
    return worst


def project(const Py_ssize_t[::1] kinds, const Py_ssize_t[::1] offsets,
            const Py_ssize_t[::1] rows, const Py_ssize_t[::1] cols,
            const double[::1] point, const double[::1] ambient, double[::1] out):
    """Project ``ambient`` onto the product tangent space at ``point``.

    Writes into ``out`` and returns the squared norm of the result.
    """
    cdef Py_ssize_t c, m = kinds.shape[0], off, wmax = 1
    cdef double total = 0.0
    cdef double* work
    for c in range(m):
        if kinds[c] == 3 and cols[c] * cols[c] > wmax:
            wmax = cols[c] * cols[c]
    work = <double*> malloc(wmax * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        with nogil:
            for c in range(m):
                off = offsets[c]
                total += _project_one(kinds[c], rows[c], cols[c], &point[off],
                                      &ambient[off], &out[off], work)
    finally:
        free(work)
    return total


def retract(const Py_ssize_t[::1] kinds, const Py_ssize_t[::1] offsets,
            const Py_ssize_t[::1] rows, const Py_ssize_t[::1] cols,
            const double[::1] point, const double[::1] tangent, double alpha,
            double[::1] out):
    """Retract ``point + alpha * tangent`` componentwise into ``out``.

    Returns -1 on success or the index of the first degenerate component.
    """
    cdef Py_ssize_t c, m = kinds.shape[0], off, bad = -1
    with nogil:
        for c in range(m):
            off = offsets[c]
            if _retract_one(kinds[c], rows[c], cols[c], &point[off],
                            &tangent[off], alpha, &out[off]):
                bad = c
                break
    return bad


def residuals(const Py_ssize_t[::1] kinds, const Py_ssize_t[::1] offsets,
              const Py_ssize_t[::1] rows, const Py_ssize_t[::1] cols,
              const double[::1] point, double[::1] out):
    """Per-component constraint residuals written into ``out``."""
    cdef Py_ssize_t c, m = kinds.shape[0]
    with nogil:
        for c in range(m):
            out[c] = _residual_one(kinds[c], rows[c], cols[c], &point[offsets[c]])
