"""Training losses, written against the autodiff tape."""

from dataclasses import dataclass, fields

import numpy as np

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """Loss weights. ``mode`` is ``supervised`` or ``unsupervised``."""
    w_spec: float = 1.0
    w_nce: float = 1.0
    w_over: float = 1.0
    tau: float = 0.07
    alpha_bij: float = 1.0
    alpha_orth: float = 1.0
    mode: str = "supervised"
    nce_samples: int = 128

    def __post_init__(self):
        for f in ("w_spec", "w_nce", "w_over", "alpha_bij", "alpha_orth"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.mode not in ("supervised", "unsupervised"):
            raise ValueError(f"unknown loss mode {self.mode!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown loss option(s): {sorted(unknown)}")
        return cls(**d)


def loss_spectral(tape, C, C_gt):
    """Squared Frobenius distance to the ground-truth functional map."""
    return tape.square(C - C_gt).sum()


def loss_nce(tape, Fx, Fy, pairs, tau):
    """Contrastive loss over matched pairs ``(i, j)``.

    For each pair the logits are ``Fx[i] . Fy[k] / tau`` over all ``k``
    that appear as the second element of some pair; the loss is the mean
    negative log-probability of the true ``j``.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("contrastive loss needs at least one matched pair")
    fx = tape.rows(Fx, pairs[:, 0])
    fy = tape.rows(Fy, pairs[:, 1])
    logits = (fx @ fy.T) * (1.0 / tau)
    logp = tape.log_softmax(logits)
    diag = tape.mul(logp, np.eye(len(pairs))).sum()
    return -diag * (1.0 / len(pairs))


def bce(tape, p, y):
    """Mean binary cross entropy with ``p`` clamped to ``[1e-7, 1 - 1e-7]``."""
    y = np.asarray(y, dtype=float).reshape(p.shape)
    p = tape.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    terms = tape.mul(tape.log(p), y) + tape.mul(tape.log(1.0 - p), 1.0 - y)
    return -terms.mean()


def loss_overlap(tape, p_x, p_y, y_x, y_y):
    """Average of the per-shape overlap classification losses."""
    return (bce(tape, p_x, y_x) + bce(tape, p_y, y_y)) * 0.5


def loss_total(tape, spec, nce, over, cfg):
    """Weighted sum; zero-weighted terms are left out of the graph."""
    total = None
    for w, term in ((cfg.w_spec, spec), (cfg.w_nce, nce), (cfg.w_over, over)):
        if w and term is not None:
            t = term * w
            total = t if total is None else total + t
    return tape.const(0.0) if total is None else total


def truncated_identity(shape, r):
    I = np.zeros(shape)
    n = min(r, *shape)
    I[np.arange(n), np.arange(n)] = 1.0
    return I


def loss_unsupervised(tape, C12, C21, r, alpha_bij=1.0, alpha_orth=1.0):
    """Bijectivity and orthogonality penalties towards the rank-``r`` identity.

    Returns ``(total, bijectivity, orthogonality)``.
    """
    bij = tape.square(C12 @ C21 - truncated_identity((C12.shape[0], C21.shape[1]), r)).sum()
    o1 = tape.square(C12 @ C12.T - truncated_identity((C12.shape[0],) * 2, r)).sum()
    o2 = tape.square(C21.T @ C21 - truncated_identity((C21.shape[1],) * 2, r)).sum()
    orth = o1 + o2
    return bij * alpha_bij + orth * alpha_orth, bij, orth
