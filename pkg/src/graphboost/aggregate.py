"""Node-aggregation function families and alignment-based selection.

Three kinds: multiplication by a fixed operator, lazy input injection
(rho * P x + (1 - rho) * x_init), and a learnable polynomial-in-powers model
whose weights are trained by gradient ascent on the kernel target alignment
between the training-block Gram matrix of the aggregated features and the
Gram matrix of one-hot labels. All three are linear in the current
representation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import PropagationMatrix
from .mlp import TrainConfig, _Optimizer

ALIGNMENT_EPS = 1e-12
DEFAULT_N_DEG = 3


@dataclass
class AlignmentConfig:
    epochs: int = 20
    optimizer: str = "adam"
    lr: float = 1e-2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("alignment epochs must be >= 1")


@dataclass(frozen=True)
class FixedMatrix:
    operator: PropagationMatrix

    def apply(self, x_t, x_initial=None):
        return self.operator.apply(x_t)


@dataclass(frozen=True)
class InputInjection:
    rho: float
    operator: PropagationMatrix

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")

    def apply(self, x_t, x_initial=None):
        if x_initial is None:
            raise ValueError("input injection needs the initial features")
        return self.rho * self.operator.apply(x_t) + (1.0 - self.rho) * x_initial


@dataclass(frozen=True)
class Kta:
    """x -> w x + sum_k w_k P^{2^k} x with N_deg + 2 learnable weights.

    ``weights[0]`` multiplies the identity term; ``weights[1 + k]``
    multiplies the 2^k-th power, k = 0..n_deg.
    """

    operator: PropagationMatrix
    weights: np.ndarray
    n_deg: int = DEFAULT_N_DEG

    def __post_init__(self):
        if len(self.weights) != self.n_deg + 2:
            raise ValueError(
                f"need {self.n_deg + 2} weights, got {len(self.weights)}"
            )

    @classmethod
    def initial(cls, operator, n_deg=DEFAULT_N_DEG):
        # weights start at 1 by protocol
        return cls(operator=operator, weights=np.ones(n_deg + 2), n_deg=n_deg)

    def basis(self, x):
        """[x, P x, P^2 x, P^4 x, ...] via cumulative sparse matvecs."""
        outs = [np.asarray(x, dtype=float)]
        cur = outs[0]
        reached = 0
        for k in range(self.n_deg + 1):
            target = 2 ** k
            for _ in range(target - reached):
                cur = self.operator.apply(cur)
            reached = target
            outs.append(cur)
        return outs

    def apply(self, x_t, x_initial=None):
        outs = self.basis(x_t)
        acc = self.weights[0] * outs[0]
        for k in range(self.n_deg + 1):
            acc = acc + self.weights[1 + k] * outs[1 + k]
        return acc


def apply(aggregator, x_t, x_initial=None):
    return aggregator.apply(x_t, x_initial)


def gram(z, train_ids):
    """Gram matrix of training rows: K_ij = <z_i, z_j>, symmetric PSD."""
    train_ids = np.asarray(train_ids)
    if len(train_ids) < 2:
        raise ValueError("gram needs at least two training rows")
    zt = np.asarray(z, dtype=float)[train_ids]
    return zt @ zt.T


def alignment(z, z_prime, train_ids, eps=ALIGNMENT_EPS):
    """Cosine of the flattened training-block Gram matrices, in [-1, 1]."""
    k1 = gram(z, train_ids)
    k2 = gram(z_prime, train_ids)
    n1 = np.linalg.norm(k1)
    n2 = np.linalg.norm(k2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("alignment undefined for an all-zero Gram matrix")
    return float(np.vdot(k1, k2) / (n1 * n2 + eps))


def _alignment_value_grad(basis_train, theta, k_target, eps=ALIGNMENT_EPS):
    """Alignment of sum_i theta_i B_i against a fixed target Gram matrix,
    plus its exact gradient in theta.

    ``basis_train`` holds the train-row blocks of the basis outputs.
    """
    zt = sum(t * b for t, b in zip(theta, basis_train))
    k = zt @ zt.T
    u = float(np.vdot(k, k_target))
    v = float(np.linalg.norm(k))
    c = float(np.linalg.norm(k_target))
    denom = v * c + eps
    rho = u / denom
    kz = k @ zt          # for d||K||
    kyz = k_target @ zt  # for d<K, K_Y>
    grad = np.empty(len(theta))
    for i, b in enumerate(basis_train):
        du = 2.0 * float(np.vdot(b, kyz))
        dv = 2.0 * float(np.vdot(b, kz)) / v if v > 0 else 0.0
        grad[i] = (du - rho * c * dv) / denom
    return rho, grad


def fit_kta(aggregator: Kta, x_t, labels_onehot_train, train_ids,
            cfg: AlignmentConfig):
    """Gradient ascent on the alignment between the aggregated features and
    the one-hot label Gram matrix; only train-restricted labels enter.

    Returns (fitted aggregator, achieved alignment).
    """
    train_ids = np.asarray(train_ids)
    y = np.asarray(labels_onehot_train, dtype=float)
    if y.shape[0] != len(train_ids):
        raise ValueError("labels must be restricted to the train rows")
    basis = aggregator.basis(x_t)
    basis_train = [b[train_ids] for b in basis]
    k_target = y @ y.T
    theta = aggregator.weights.astype(float).copy()
    opt = _Optimizer(
        TrainConfig(epochs=1, optimizer=cfg.optimizer, lr=cfg.lr,
                    weight_decay=0.0),
        [theta.shape],
    )
    rho = None
    for _ in range(cfg.epochs):
        rho, grad = _alignment_value_grad(basis_train, theta, k_target)
        opt.step([theta], [-grad])  # ascent
    rho_final, _ = _alignment_value_grad(basis_train, theta, k_target)
    return replace(aggregator, weights=theta), float(rho_final)
