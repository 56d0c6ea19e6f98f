"""Pure numpy fallback for the compiled ``_kernels`` extension.

Same entry points, same layout conventions, same degeneracy rules.
"""
import numpy as np

DEGENERATE_RTOL = 1e-12


def _blocks(kinds, offsets, rows, cols):
    for c in range(len(kinds)):
        a, b = int(rows[c]), int(cols[c])
        off = int(offsets[c])
        yield c, int(kinds[c]), a, b, slice(off, off + a * b)


def project(kinds, offsets, rows, cols, point, ambient, out):
    total = 0.0
    for _, kind, a, b, s in _blocks(kinds, offsets, rows, cols):
        amb = ambient[s].reshape(a, b)
        if kind == 0:
            res = amb
        else:
            p = point[s].reshape(a, b)
            if kind == 1:
                res = amb - np.sum(amb * p) * p
            elif kind == 2:
                res = amb - p * np.sum(p * amb, axis=0)
            else:
                w = p.T @ amb
                res = amb - p @ (0.5 * (w + w.T))
        out[s] = res.ravel()
        total += float(np.sum(res * res))
    return total


def retract(kinds, offsets, rows, cols, point, tangent, alpha, out):
    # non-finite steps are reported as degenerate, not warned about
    with np.errstate(invalid="ignore", over="ignore"):
        return _retract(kinds, offsets, rows, cols, point, tangent, alpha, out)


def _retract(kinds, offsets, rows, cols, point, tangent, alpha, out):
    for c, kind, a, b, s in _blocks(kinds, offsets, rows, cols):
        step = alpha * tangent[s]
        y = point[s] + step
        # a zero step keeps the point bit-for-bit (R_p(0) = p)
        if kind == 0 or not np.any(step != 0.0):
            out[s] = y
            continue
        if kind == 1:
            n = np.sqrt(np.sum(y * y))
            if not (np.isfinite(n) and n > 0):
                return c
            out[s] = y / n
            continue
        y = y.reshape(a, b)
        if kind == 2:
            n = np.sqrt(np.sum(y * y, axis=0))
            if not (np.all(np.isfinite(n)) and np.all(n > 0)):
                return c
            out[s] = (y / n).ravel()
            continue
        scale = np.sqrt(np.max(np.sum(y * y, axis=0)))
        if not (np.isfinite(scale) and scale > 0):
            return c
        q, r = np.linalg.qr(y)
        d = np.diag(r)
        signs = np.where(d < 0, -1.0, 1.0)
        if not (np.all(np.isfinite(d)) and np.min(np.abs(d)) > DEGENERATE_RTOL * scale):
            return c
        out[s] = (q * signs).ravel()
    return -1


def residuals(kinds, offsets, rows, cols, point, out):
    for c, kind, a, b, s in _blocks(kinds, offsets, rows, cols):
        p = point[s]
        if kind == 0:
            out[c] = 0.0
        elif kind == 1:
            out[c] = abs(np.sqrt(np.sum(p * p)) - 1.0)
        elif kind == 2:
            p = p.reshape(a, b)
            out[c] = np.max(np.abs(np.sqrt(np.sum(p * p, axis=0)) - 1.0))
        else:
            p = p.reshape(a, b)
            out[c] = np.max(np.abs(p.T @ p - np.eye(b)))
