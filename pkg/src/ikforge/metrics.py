"""Pose errors, the distal-teaching loss and its gradient w.r.t. joint angles.

The loss for a predicted configuration ``theta`` and a target pose is::

    w * eps_pos + (1 - w) * eps_ori + lam * d_v

with ``eps_pos`` the Euclidean position error, ``eps_ori = 2 acos(|q_hat . q_star|)``
and ``d_v`` the summed distance beyond the joint limits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ikforge import quaternion as quat
from ikforge.chain import ChainSpec, Pose, check_config, frames, limit_violations

# |q_hat . q_star| above this is treated as aligned; the acos slope is dropped.
ACOS_CLAMP = 1.0 - 1e-7
# position gradient is zero below this distance
POS_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w: float = 0.75
    lam: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")


def _position(p):
    return p.position if isinstance(p, Pose) else np.asarray(p, dtype=float)


def position_error(predicted, target) -> float:
    return float(np.linalg.norm(_position(predicted) - _position(target)))


def orientation_error(predicted, target) -> float:
    """Rotation angle between two orientations, in ``[0, pi]``; sign-invariant."""
    a = predicted.orientation if isinstance(predicted, Pose) else predicted
    b = target.orientation if isinstance(target, Pose) else target
    return float(quat.angle_between(quat.normalize(a), quat.normalize(b)))


def combined_loss(eps_pos, eps_ori, weights: LossWeights = LossWeights()):
    return weights.w * eps_pos + (1.0 - weights.w) * eps_ori


def violation_distance(chain: ChainSpec, config):
    return np.sum(limit_violations(chain, config), axis=-1)


def penalized_loss(chain: ChainSpec, config, target: Pose, weights: LossWeights = LossWeights()) -> float:
    loss, _ = loss_and_grad(chain, config, target.position, target.orientation, weights,
                            need_grad=False)
    return float(loss)


def encode_config(config):
    """Interleave ``(sin t1, cos t1, ..., sin tn, cos tn)``."""
    theta = np.asarray(config, dtype=float)
    out = np.empty(theta.shape[:-1] + (2 * theta.shape[-1],))
    out[..., 0::2] = np.sin(theta)
    out[..., 1::2] = np.cos(theta)
    return out


def decode_config(raw):
    """Inverse of :func:`encode_config`; pairs need not be normalized."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] % 2:
        raise ValueError("encoded configuration must have even length")
    s = raw[..., 0::2]
    c = raw[..., 1::2]
    if np.any((np.abs(s) < 1e-12) & (np.abs(c) < 1e-12)):
        raise ValueError("degenerate (0, 0) sin/cos pair")
    return np.arctan2(s, c)


def loss_and_grad(chain: ChainSpec, config, target_p, target_q, weights: LossWeights,
                  need_grad=True, details=False):
    """Penalized loss and its gradient for a batch of configurations.

    ``config`` is ``(..., n)``; targets broadcast against the batch shape.
    Returns ``(loss, grad)`` or, with ``details``, also ``(eps_pos, eps_ori)``.
    The gradient uses the world joint axes ``z_i`` and origins ``p_i``::

        d/dtheta_i = z_i . [w (p - p_i) x u + (1 - w) k r] + lam * s_i

    where ``u`` is the unit position error, ``k r`` the orientation slope
    folded into a 3-vector, and ``s_i`` the sign of the limit violation.
    """
    theta = check_config(chain, config)
    p, r, origins, axes = frames(chain, theta)
    q = quat.from_matrix(r)
    target_p = np.asarray(target_p, dtype=float)
    target_q = quat.normalize(target_q)

    diff = p - target_p
    eps_pos = np.linalg.norm(diff, axis=-1)
    dot = np.sum(q * target_q, axis=-1)
    adot = np.abs(dot)
    eps_ori = quat.angle_between(q, target_q)
    viol = np.maximum(0.0, np.maximum(chain.lower - theta, theta - chain.upper))
    loss = weights.w * eps_pos + (1.0 - weights.w) * eps_ori + weights.lam * viol.sum(axis=-1)

    grad = None
    if need_grad:
        safe = eps_pos > POS_EPS
        u = np.where(safe[..., None], diff / np.where(safe, eps_pos, 1.0)[..., None], 0.0)

        aligned = adot > ACOS_CLAMP
        k = np.where(aligned, 0.0,
                     -np.sign(dot) / np.sqrt(np.where(aligned, 1.0, 1.0 - dot * dot)))
        qw, qv = q[..., :1], q[..., 1:]
        tw, tv = target_q[..., :1], target_q[..., 1:]
        rvec = qw * tv - tw * qv + np.cross(qv, tv)

        lever = np.cross(p[..., None, :] - origins, u[..., None, :])
        field_ = weights.w * lever + ((1.0 - weights.w) * k)[..., None, None] * rvec[..., None, :]
        grad = np.sum(axes * field_, axis=-1)
        if weights.lam:
            sign = (theta > chain.upper).astype(float) - (theta < chain.lower).astype(float)
            grad = grad + weights.lam * sign

    if details:
        return loss, grad, eps_pos, eps_ori
    return loss, grad


def grad_loss_wrt_config(chain: ChainSpec, config, target: Pose, weights: LossWeights = LossWeights()):
    config = check_config(chain, config)
    _, grad = loss_and_grad(chain, config, target.position, target.orientation, weights)
    return grad
