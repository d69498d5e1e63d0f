"""Loss terms of the DWL objective.

All functions accept :class:`Tensor` or array inputs and return scalar
tensors, so they serve both the learner and direct arithmetic checks.
"""

from __future__ import annotations

import numpy as np

from ..nn.tensor import Tensor, as_tensor, minimum, norm


def denoise_loss(recon, target, z, lambda_r: float, squared: bool = False) -> Tensor:
    """Per-sample ``||recon - target||_2 + lambda_r * ||z||_1``, averaged over samples.

    Inputs may be single vectors or ``(B, D)`` batches. ``squared`` swaps the
    norm for the squared norm.
    """
    recon, z = as_tensor(recon), as_tensor(z)
    diff = recon - as_tensor(target)
    if squared:
        err = (diff * diff).sum(axis=-1)
    else:
        err = norm(diff, axis=-1)
    reg = z.abs().sum(axis=-1)
    return (err + reg * lambda_r).mean()


def ppo_surrogate(logp_new, logp_old, advantages, c1: float, c2: float) -> Tensor:
    """Clipped surrogate ``mean(min(rho*A, clip(rho, c1, c2)*A))`` (to be maximised)."""
    logp_new = as_tensor(logp_new)
    adv = np.asarray(advantages, dtype=float)
    ratio = (logp_new - as_tensor(logp_old)).exp()
    return minimum(ratio * adv, ratio.clip(c1, c2) * adv).mean()


def ppo_loss(logp_new, logp_old, advantages, c1: float, c2: float) -> Tensor:
    return ppo_surrogate(logp_new, logp_old, advantages, c1, c2)


def policy_descent_loss(surrogate: Tensor, entropy, entropy_coef: float) -> Tensor:
    """Descent form of the policy objective with the entropy bonus folded in."""
    return -(surrogate + as_tensor(entropy) * entropy_coef)


def value_loss(returns, values, squared: bool = False) -> Tensor:
    """``||R - V||_2`` over the whole batch (squared norm, averaged, if ``squared``)."""
    diff = as_tensor(values) - as_tensor(returns)
    flat = diff.reshape(-1)
    if squared:
        return (flat * flat).mean()
    return norm(flat, axis=-1)


def dwl_total_loss(denoise, policy, value, lambda_pi: float, lambda_v: float,
                   denoise_coef: float = 1.0) -> Tensor:
    return (as_tensor(denoise) * denoise_coef + as_tensor(policy) * lambda_pi
            + as_tensor(value) * lambda_v)
