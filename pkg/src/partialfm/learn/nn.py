"""Toy network: point-wise encoder, cross-attention refiner, overlap head,
differentiable functional map layer."""

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ..fmap import DEFAULT_GAMMA, DEFAULT_LAMBDA, MASK_KINDS

INPUT_KINDS = ("xyz", "hks", "wks")


@dataclass(frozen=True)
class ToyNetConfig:
    """Sizes and settings of the toy network.

    ``heads * head_dim`` must equal ``out_dim`` (the feature width).
    """
    widths: tuple = (64, 64)
    out_dim: int = 32
    heads: int = 4
    head_dim: int = 8
    fps_count: int = 128
    lr: float = 1e-3
    seed: int = 0
    inputs: tuple = ("xyz",)
    interpolation: str = "idw"
    overlap_hidden: int = 32
    k: int = 30
    mask: str = "resolvent"
    gamma: float = DEFAULT_GAMMA
    lam: float = DEFAULT_LAMBDA
    attention: bool = True

    def __post_init__(self):
        if self.heads * self.head_dim != self.out_dim:
            raise ValueError(f"heads * head_dim = {self.heads * self.head_dim} != out_dim {self.out_dim}")
        if self.fps_count < 1 or self.k < 1 or self.lr <= 0:
            raise ValueError("fps_count, k and lr must be positive")
        if self.interpolation not in ("idw", "nearest"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.mask not in MASK_KINDS:
            raise ValueError(f"unknown mask {self.mask!r}")
        bad = set(self.inputs) - set(INPUT_KINDS)
        if not self.inputs or bad:
            raise ValueError(f"inputs must be drawn from {INPUT_KINDS}, got {self.inputs}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "inputs", tuple(self.inputs))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network option(s): {sorted(unknown)}")
        return cls(**d)


def _dense(rng, n_in, n_out):
    # He initialization for ReLU layers
    return rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in), np.zeros(n_out)


def init_params(cfg, in_dim, rng):
    """Named parameter arrays for :class:`ToyNetConfig`."""
    p = {}
    dims = [in_dim, *cfg.widths, cfg.out_dim]
    for i in range(len(dims) - 1):
        p[f"enc.W{i}"], p[f"enc.b{i}"] = _dense(rng, dims[i], dims[i + 1])
    w = cfg.out_dim
    for name in ("q", "k", "v"):
        p[f"att.W{name}"] = rng.standard_normal((w, w)) / np.sqrt(w)
    p["att.U0"], p["att.c0"] = _dense(rng, 2 * w, 2 * w)
    p["att.U1"], p["att.c1"] = _dense(rng, 2 * w, w)
    p["att.U1"] *= 0.1
    p["ovl.W0"], p["ovl.b0"] = _dense(rng, w, cfg.overlap_hidden)
    p["ovl.W1"], p["ovl.b1"] = _dense(rng, cfg.overlap_hidden, 1)
    return p


def encoder(tape, P, X, n_layers):
    """Per-point MLP with ReLU between layers."""
    h = tape.lift(X)
    for i in range(n_layers):
        h = h @ P[f"enc.W{i}"] + P[f"enc.b{i}"]
        if i < n_layers - 1:
            h = tape.relu(h)
    return h


def attention_weights(tape, q, k, head_dim):
    """Row softmax of ``q k^T / sqrt(head_dim)``."""
    return tape.softmax((q @ k.T) * (1.0 / np.sqrt(head_dim)))


def _message(tape, P, x, y, cfg):
    q, k, v = x @ P["att.Wq"], y @ P["att.Wk"], y @ P["att.Wv"]
    heads = []
    for h in range(cfg.heads):
        s, e = h * cfg.head_dim, (h + 1) * cfg.head_dim
        a = attention_weights(tape, tape.cols(q, s, e), tape.cols(k, s, e), cfg.head_dim)
        heads.append(a @ tape.cols(v, s, e))
    return tape.concat(heads, axis=1)


def _update(tape, P, x, m):
    h = tape.concat([x, m], axis=1) @ P["att.U0"] + P["att.c0"]
    h = tape.relu(tape.instance_norm(h))
    return x + (h @ P["att.U1"] + P["att.c1"])


def cross_attention(tape, P, Fx, Fy, cfg):
    """One round of bipartite attention between the two sample sets.

    Every sample of one shape attends to all samples of the other; both
    sides are updated from the pre-update features with shared weights,
    ``x <- x + MLP([x | message])``.
    """
    if Fx.shape[1] != cfg.out_dim or Fy.shape[1] != cfg.out_dim:
        raise ValueError(f"feature width must be {cfg.out_dim}, got {Fx.shape[1]} and {Fy.shape[1]}")
    mx = _message(tape, P, Fx, Fy, cfg)
    my = _message(tape, P, Fy, Fx, cfg)
    return _update(tape, P, Fx, mx), _update(tape, P, Fy, my)


def overlap_head(tape, P, F):
    """Two-layer MLP with a sigmoid output, applied to every point."""
    h = tape.relu(F @ P["ovl.W0"] + P["ovl.b0"])
    return tape.sigmoid(h @ P["ovl.W1"] + P["ovl.b1"])


def diff_fmap_layer(tape, A, B, mask, lam):
    """Differentiable masked functional map solve (``mask`` is constant)."""
    return tape.fmap_solve(A, B, mask, lam)


def interpolation_matrix(points, sample_idx, mode="idw", n_near=3):
    """Dense ``n x N`` weights that spread sample values to all points.

    ``idw``: inverse-distance weights over the ``n_near`` nearest samples
    (a point that is a sample copies it exactly); ``nearest``: copy the
    nearest sample.
    """
    from scipy.spatial import cKDTree
    pts = np.asarray(points, dtype=float)
    samp = pts[sample_idx]
    n, N = len(pts), len(sample_idx)
    kk = 1 if mode == "nearest" else min(n_near, N)
    d, j = cKDTree(samp).query(pts, k=kk)
    d, j = d.reshape(n, kk), j.reshape(n, kk)
    W = np.zeros((n, N))
    if kk == 1:
        W[np.arange(n), j[:, 0]] = 1.0
        return W
    exact = d[:, 0] <= 1e-12
    w = 1.0 / np.maximum(d, 1e-12)
    w /= w.sum(axis=1, keepdims=True)
    w[exact] = 0.0
    w[exact, 0] = 1.0
    np.add.at(W, (np.repeat(np.arange(n), kk), j.ravel()), w.ravel())
    return W


def save_params(path, params, comments=()):
    """Text checkpoint: a ``name shape`` line, then the flattened values."""
    out = [f"# {c}" for c in comments]
    for name in sorted(params):
        a = np.asarray(params[name], dtype=float)
        out.append(f"{name} {' '.join(str(s) for s in a.shape) or '-'}")
        out.append(" ".join(repr(float(x)) for x in a.ravel()))
    Path(path).write_text("\n".join(out) + "\n")


def load_params(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) % 2:
        raise ValueError(f"{path}: truncated checkpoint")
    params = {}
    for head, body in zip(lines[::2], lines[1::2]):
        name, *dims = head.split()
        shape = () if dims == ["-"] else tuple(int(x) for x in dims)
        vals = np.array([float(x) for x in body.split()])
        if vals.size != int(np.prod(shape)):
            raise ValueError(f"{path}: tensor {name} has {vals.size} values for shape {shape}")
        params[name] = vals.reshape(shape)
    return params
