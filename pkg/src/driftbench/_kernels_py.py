"""Pure-numpy reference kernels.

Contract shared with the compiled ``_kernels`` module:

- ``cosine_scores(e, P)``: cosine of ``e`` with each row of ``P``; a zero
  norm on either side gives 0.
- ``cosine_argmax(E, P)``: per row of ``E`` the index of the best row of
  ``P`` (first index on ties), or -1 when ``P`` is empty.
- ``linear_scores(e, W)``: logits ``W @ e``.
- ``linear_argmax(E, W)``: ``cosine_argmax`` analogue over ``linear_scores``.
- ``mean_update(p, f, count)``: in place ``p = (f + count*p) / (count+1)``.
- ``gated_update(p, f, alpha)``: in place ``p = (1-alpha)*p + alpha*f``.
- ``sgd_softmax_step(W, e, g, lr)``: in place ``W -= lr * outer(g, e)``.
"""
import numpy as np


def cosine_scores(e, P):
    e = np.asarray(e, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if P.shape[0] == 0:
        return np.empty(0)
    if P.shape[1] != e.shape[0]:
        raise ValueError("dimension mismatch")
    ne = np.sqrt(e @ e)
    npr = np.sqrt(np.einsum("ij,ij->i", P, P))
    dots = P @ e
    denom = ne * npr
    ok = denom > 0.0
    out = np.zeros(P.shape[0])
    out[ok] = dots[ok] / denom[ok]
    return out


def cosine_argmax(E, P):
    E = np.asarray(E, dtype=np.float64)
    out = np.full(E.shape[0], -1, dtype=np.int64)
    if P.shape[0] == 0:
        return out
    for i in range(E.shape[0]):
        out[i] = int(np.argmax(cosine_scores(E[i], P)))
    return out


def linear_scores(e, W):
    if W.shape[0] == 0:
        return np.empty(0)
    if W.shape[1] != e.shape[0]:
        raise ValueError("dimension mismatch")
    return W @ e


def linear_argmax(E, W):
    E = np.asarray(E, dtype=np.float64)
    out = np.full(E.shape[0], -1, dtype=np.int64)
    if W.shape[0] == 0:
        return out
    for i in range(E.shape[0]):
        out[i] = int(np.argmax(linear_scores(E[i], W)))
    return out


def mean_update(p, f, count):
    p[:] = (f + count * p) / (count + 1)


def gated_update(p, f, alpha):
    p[:] = (1.0 - alpha) * p + alpha * f


def sgd_softmax_step(W, e, grad_logits, lr):
    W -= np.outer(lr * grad_logits, e)
