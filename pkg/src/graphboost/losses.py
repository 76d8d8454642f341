"""Binary margin loss, sigmoid cross-entropy surrogate, and error functionals.

Score conventions: a binary score vector is a float array of shape (N,); a
multiclass score matrix has shape (N, K). Gradients returned by
``surrogate_grad`` live in R^N and are exactly zero off the training set.
"""

from __future__ import annotations

import numpy as np

DEFAULT_CLIP = 1e-7


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def margin_loss(score, label, delta=0.0):
    """1 iff (2p - 1) y# < delta with p = sigmoid(score), y# = 2y - 1.

    Strict inequality: a prediction exactly on the margin counts correct.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    p = sigmoid(score)
    ysharp = 2.0 * np.asarray(label, dtype=float) - 1.0
    return ((2.0 * p - 1.0) * ysharp < delta).astype(float)


def sigmoid_ce(score, label, clip=DEFAULT_CLIP):
    """-y log p - (1-y) log(1-p), with p and 1-p clipped below at ``clip``."""
    p = np.clip(sigmoid(score), clip, 1.0 - clip)
    y = np.asarray(label, dtype=float)
    return -y * np.log(p) - (1.0 - y) * np.log(1.0 - p)


def softmax(scores):
    scores = np.asarray(scores, dtype=float)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def softmax_ce(scores, labels, clip=DEFAULT_CLIP):
    """Multiclass cross-entropy of softmax(scores) rows vs integer labels."""
    p = np.clip(softmax(scores), clip, 1.0)
    rows = np.arange(len(labels))
    return -np.log(p[rows, np.asarray(labels, dtype=np.int64)])


def surrogate_grad(yhat, labels, split):
    """Gradient of the averaged sigmoid cross-entropy over train nodes.

    g_n = (1/M)(p_n - y_n) on the train set and exactly 0 elsewhere.
    """
    yhat = np.asarray(yhat, dtype=float)
    if yhat.ndim != 1:
        raise ValueError("surrogate_grad expects a binary score vector")
    if split.m == 0:
        raise ValueError("empty train set")
    g = np.zeros_like(yhat)
    tr = split.train
    p = sigmoid(yhat[tr])
    g[tr] = (p - np.asarray(labels, dtype=float)[tr]) / split.m
    return g


def multiclass_surrogate_grad(scores, labels, split):
    """(1/M)(softmax(S) - onehot(y)) on train rows, zero elsewhere."""
    scores = np.asarray(scores, dtype=float)
    if split.m == 0:
        raise ValueError("empty train set")
    g = np.zeros_like(scores)
    tr = split.train
    p = softmax(scores[tr])
    p[np.arange(len(tr)), np.asarray(labels, dtype=np.int64)[tr]] -= 1.0
    g[tr] = p / split.m
    return g


def errors(yhat, labels, split, delta=0.0, clip=DEFAULT_CLIP):
    """Train error, test error, and train surrogate loss.

    Binary scores use the margin loss; multiclass scores use argmax-vs-label
    0-1 error (np.argmax breaks ties toward the lowest index).
    """
    yhat = np.asarray(yhat, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if split.m == 0 or split.u == 0:
        raise ValueError("errors need nonempty train and test sets")
    tr, te = split.train, split.test
    if yhat.ndim == 1:
        per_node = margin_loss(yhat, labels, delta)
        surrogate = float(np.mean(sigmoid_ce(yhat[tr], labels[tr], clip)))
    else:
        per_node = (np.argmax(yhat, axis=1) != labels).astype(float)
        surrogate = float(np.mean(softmax_ce(yhat[tr], labels[tr], clip)))
    return {
        "train_err": float(np.mean(per_node[tr])),
        "test_err": float(np.mean(per_node[te])),
        "surrogate": surrogate,
    }
