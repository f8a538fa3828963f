"""Hot inner loops with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``VIEWGROUP_DISABLE_NUMBA`` is
unset (or "0"). Both paths implement identical arithmetic; the test suite runs
them against each other, and ``benchmarks/bench_kernels.py`` times them.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

_DISABLED = os.environ.get("VIEWGROUP_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")
NUMBA_AVAILABLE = njit is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def sigmoid_np(x, tau):
    z = np.asarray(x, dtype=np.float64) / tau
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_prime_np(x, tau):
    # sigma(x) * sigma(-x) keeps precision on both tails
    return sigmoid_np(x, tau) * sigmoid_np(-np.asarray(x, dtype=np.float64), tau) / tau


def anchor_numpy(s, pos, neg, tau, attention, singleton_gamma, want_grad):
    """Loss and gradient row for one anchor given its similarity row ``s``."""
    p = pos.size
    grad = np.zeros(s.shape[0])
    sp = s[pos]
    dn = s[neg][None, :] - sp[:, None]
    a = sigmoid_np(dn, tau).sum(axis=1)
    use_att = attention and p >= 2
    if use_att:
        dp = sp[None, :] - sp[:, None]
        sig_p = sigmoid_np(dp, tau)
        np.fill_diagonal(sig_p, 0.0)
        g = sig_p.sum(axis=1)
        miss = a / (a + g)
    else:
        gam = singleton_gamma if attention else 1.0
        miss = gam * a / (gam * a + 1.0)
    # mean of (1 - f) rather than 1 - mean(f): keeps precision when every f is near 1
    loss = miss.sum() / p
    if not want_grad:
        return loss, grad
    scale = -1.0 / p
    dn_prime = sigmoid_prime_np(dn, tau)
    if use_att:
        w = 1.0 / (a + g) ** 2
        dp_prime = sigmoid_prime_np(dp, tau)
        np.fill_diagonal(dp_prime, 0.0)
        grad[neg] += scale * (-(g * w)[:, None] * dn_prime).sum(axis=0)
        grad[pos] += scale * ((a * w)[:, None] * dp_prime).sum(axis=0)
        grad[pos] += scale * ((g * w) * dn_prime.sum(axis=1) - (a * w) * dp_prime.sum(axis=1))
    else:
        w = gam / (gam * a + 1.0) ** 2
        grad[neg] += scale * (-w[:, None] * dn_prime).sum(axis=0)
        grad[pos] += scale * (w * dn_prime.sum(axis=1))
    return loss, grad


def _vgl_rows_numpy(sims, groups, tau, attention, singleton_gamma, want_grad):
    n = sims.shape[0]
    loss = np.zeros(n)
    grad = np.zeros((n, n))
    for q in range(n):
        same = groups == groups[q]
        same[q] = False
        pos = np.flatnonzero(same)
        neg = np.flatnonzero(groups != groups[q])
        loss[q], grad[q] = anchor_numpy(sims[q], pos, neg, tau, attention, singleton_gamma, want_grad)
    return loss, grad


def _reflect_np(i, n):
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


def _sample_bilinear_numpy(img, ys, xs):
    h, w = img.shape[:2]
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = (ys - y0f)[..., None]
    fx = (xs - x0f)[..., None]
    y0 = y0f.astype(np.int64)
    x0 = x0f.astype(np.int64)
    y1 = _reflect_np(y0 + 1, h)
    x1 = _reflect_np(x0 + 1, w)
    y0 = _reflect_np(y0, h)
    x0 = _reflect_np(x0, w)
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bottom


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if njit is not None:

    @njit(cache=True)
    def _sigmoid_pair_nb(x, tau):
        # sigma(x) and sigma'(x) from a single exp: with e = exp(-|x|/tau),
        # sigma(x) sigma(-x) = e / (1 + e)^2 exactly
        z = x / tau
        e = math.exp(-abs(z))
        inv = 1.0 / (1.0 + e)
        s = inv if z >= 0.0 else e * inv
        return s, e * inv * inv / tau

    @njit(cache=True)
    def _vgl_rows_numba(sims, groups, tau, attention, singleton_gamma, want_grad):
        n = sims.shape[0]
        loss = np.zeros(n)
        grad = np.zeros((n, n))
        pos = np.empty(n, dtype=np.int64)
        neg = np.empty(n, dtype=np.int64)
        dneg = np.empty(n)
        dpos = np.empty(n)
        for q in range(n):
            p = 0
            m = 0
            for k in range(n):
                if k == q:
                    continue
                if groups[k] == groups[q]:
                    pos[p] = k
                    p += 1
                else:
                    neg[m] = k
                    m += 1
            use_att = attention and p >= 2
            gam = singleton_gamma if attention else 1.0
            scale = -1.0 / p
            acc = 0.0
            for ai in range(p):
                i = pos[ai]
                si = sims[q, i]
                a = 0.0
                for b in range(m):
                    sig, dneg[b] = _sigmoid_pair_nb(sims[q, neg[b]] - si, tau)
                    a += sig
                g = 0.0
                if use_att:
                    for b in range(p):
                        if b != ai:
                            sig, dpos[b] = _sigmoid_pair_nb(sims[q, pos[b]] - si, tau)
                            g += sig
                    acc += a / (a + g)
                else:
                    acc += gam * a / (gam * a + 1.0)
                if not want_grad:
                    continue
                dsi = 0.0
                if use_att:
                    w = 1.0 / ((a + g) * (a + g))
                    for b in range(m):
                        d = dneg[b]
                        grad[q, neg[b]] += scale * (-g * w * d)
                        dsi += g * w * d
                    for b in range(p):
                        if b == ai:
                            continue
                        d = dpos[b]
                        grad[q, pos[b]] += scale * (a * w * d)
                        dsi -= a * w * d
                else:
                    w = gam / ((gam * a + 1.0) * (gam * a + 1.0))
                    for b in range(m):
                        d = dneg[b]
                        grad[q, neg[b]] += scale * (-w * d)
                        dsi += w * d
                grad[q, i] += scale * dsi
            loss[q] = acc / p
        return loss, grad

    @njit(cache=True)
    def _reflect_nb(i, n):
        if n == 1:
            return 0
        period = 2 * (n - 1)
        i = abs(i) % period
        if i >= n:
            i = period - i
        return i

    @njit(cache=True)
    def _sample_bilinear_numba(img, ys, xs):
        h, w, c = img.shape
        oh, ow = ys.shape
        out = np.empty((oh, ow, c))
        for r in range(oh):
            for s in range(ow):
                y0f = math.floor(ys[r, s])
                x0f = math.floor(xs[r, s])
                fy = ys[r, s] - y0f
                fx = xs[r, s] - x0f
                y0 = int(y0f)
                x0 = int(x0f)
                y1 = _reflect_nb(y0 + 1, h)
                x1 = _reflect_nb(x0 + 1, w)
                y0 = _reflect_nb(y0, h)
                x0 = _reflect_nb(x0, w)
                for ch in range(c):
                    top = (1.0 - fx) * img[y0, x0, ch] + fx * img[y0, x1, ch]
                    bottom = (1.0 - fx) * img[y1, x0, ch] + fx * img[y1, x1, ch]
                    out[r, s, ch] = (1.0 - fy) * top + fy * bottom
        return out

else:  # pragma: no cover
    _vgl_rows_numba = None
    _sample_bilinear_numba = None


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def vgl_rows(sims, groups, tau, attention, singleton_gamma=1.0, want_grad=True):
    """Per-anchor view grouping loss over a full similarity matrix.

    Every row ``q`` is treated as an independent anchor whose entries
    ``sims[q, k]`` are separate variables; callers must ensure every view has
    at least one other view of its group.

    Returns:
        ``(loss, grad)`` where ``loss[q]`` is the anchor loss and
        ``grad[q, k]`` is its derivative with respect to ``sims[q, k]``
        (zero on the diagonal). ``grad`` is all zeros if ``want_grad`` is false.
    """
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    groups = np.ascontiguousarray(groups, dtype=np.int64)
    fn = _vgl_rows_numba if USE_NUMBA else _vgl_rows_numpy
    return fn(sims, groups, float(tau), bool(attention), float(singleton_gamma), bool(want_grad))


def sample_bilinear(img, ys, xs):
    """Bilinear lookup of ``img`` (H, W, C) at fractional ``(ys, xs)``.

    Out-of-range coordinates reflect about the border pixels (``abcd|cba``).
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    fn = _sample_bilinear_numba if USE_NUMBA else _sample_bilinear_numpy
    return fn(img, ys, xs)
