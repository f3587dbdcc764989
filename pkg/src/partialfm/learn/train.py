"""Training loop for the toy network: data preparation, Adam, history."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..descriptors import heat_kernel_signature, wave_kernel_signature, wks_energies, default_hks_times
from ..fmap import MaskSpec, build_mask, estimate_rank, fmap_to_p2p, gt_fmap
from ..mesh import farthest_point_sample
from ..spectral import mesh_basis
from .losses import LossConfig, loss_nce, loss_overlap, loss_spectral, loss_total, loss_unsupervised
from .nn import ToyNetConfig, cross_attention, diff_fmap_layer, encoder, init_params, \
    interpolation_matrix, overlap_head
from .tape import Tape

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("step", "spec", "nce", "over", "total")
UP_AXIS = 2


class TrainingDiverged(RuntimeError):
    """A loss became NaN or infinite."""


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.Philox(seed))


@dataclass(eq=False)
class PairData:
    """Everything the network needs about one training pair, precomputed.

    Shape ``x`` is the (partial) shape whose vertices carry the ground-truth
    map ``gt`` into shape ``y``; the functional map sends ``y`` coefficients
    to ``x`` coefficients.
    """
    mesh_x: object
    mesh_y: object
    basis_x: object
    basis_y: object
    gt: object
    intrinsic_x: np.ndarray
    intrinsic_y: np.ndarray
    samples_x: np.ndarray
    samples_y: np.ndarray
    mask: np.ndarray
    C_gt: np.ndarray = None
    nce_pairs: np.ndarray = None
    label_x: np.ndarray = None
    label_y: np.ndarray = None
    rank: int = 1
    interp_x: np.ndarray = field(default=None, repr=False)
    interp_y: np.ndarray = field(default=None, repr=False)


def _intrinsic_inputs(cfg, bx, by):
    cols_x, cols_y = [], []
    if "hks" in cfg.inputs:
        t = default_hks_times(by.evals)
        cols_x.append(heat_kernel_signature(bx, t, normalize=True).values)
        cols_y.append(heat_kernel_signature(by, t, normalize=True).values)
    if "wks" in cfg.inputs:
        e, s = wks_energies(by.evals, 32)
        cols_x.append(wave_kernel_signature(bx, energies=e, sigma=s, normalize=True).values)
        cols_y.append(wave_kernel_signature(by, energies=e, sigma=s, normalize=True).values)
    if not cols_x:
        return np.zeros((bx.n, 0)), np.zeros((by.n, 0))
    return np.hstack(cols_x), np.hstack(cols_y)


def prepare_pair(mesh_x, mesh_y, gt, net, loss=None, basis_x=None, basis_y=None):
    """Precompute bases, samples, mask and supervision for one pair.

    ``gt`` maps vertices of ``mesh_x`` into ``mesh_y`` (``None`` for
    unsupervised training).
    """
    loss = loss or LossConfig()
    bx = mesh_basis(mesh_x, net.k) if basis_x is None else basis_x.truncate(net.k)
    by = mesh_basis(mesh_y, net.k) if basis_y is None else basis_y.truncate(net.k)
    ix, iy = _intrinsic_inputs(net, bx, by)
    sx = farthest_point_sample(mesh_x, min(net.fps_count, mesh_x.n_vertices)).indices
    sy = farthest_point_sample(mesh_y, min(net.fps_count, mesh_y.n_vertices)).indices
    mask = build_mask(MaskSpec(net.mask, by.evals, bx.evals, net.gamma))
    d = PairData(mesh_x, mesh_y, bx, by, gt, ix, iy, sx, sy, mask,
                 rank=estimate_rank(bx.evals, by.evals))
    if net.attention:
        d.interp_x = interpolation_matrix(mesh_x.vertices, sx, net.interpolation)
        d.interp_y = interpolation_matrix(mesh_y.vertices, sy, net.interpolation)
    if gt is not None:
        if gt.n_src != mesh_x.n_vertices or gt.n_tgt != mesh_y.n_vertices:
            raise ValueError("ground-truth map does not connect the pair")
        d.C_gt = gt_fmap(gt, by, bx).C
        matched = np.flatnonzero(gt.matched)
        if len(matched) == 0:
            raise ValueError("ground truth has no matched vertices")
        cnt = min(loss.nce_samples, len(matched))
        pick = matched[farthest_point_sample(mesh_x.vertices[matched], cnt).indices]
        d.nce_pairs = np.stack([pick, gt.target_of[pick]], axis=1)
        d.label_x = gt.matched.astype(float)
        ly = np.zeros(mesh_y.n_vertices)
        ly[gt.target_of[gt.matched]] = 1.0
        d.label_y = ly
    return d


def prepare_synth(pair, net, loss=None, basis_full=None):
    """:class:`PairData` of a partial-to-full synthetic pair (x = part, y = full)."""
    return prepare_pair(pair.part, pair.full, pair.gt, net, loss, basis_y=basis_full)


def random_transform(rng, scale=(0.9, 1.1)):
    """Rotation about the up axis times a uniform scale factor."""
    a = rng.uniform(0.0, 2 * np.pi)
    c, s = np.cos(a), np.sin(a)
    ax = [i for i in range(3) if i != UP_AXIS]
    R = np.eye(3)
    R[np.ix_(ax, ax)] = [[c, -s], [s, c]]
    return R * rng.uniform(*scale)


def augment(points, rng, transform=None, jitter=0.01):
    """Apply ``transform`` (a fresh random one if None) plus Gaussian jitter."""
    T = random_transform(rng) if transform is None else transform
    return points @ T.T + jitter * rng.standard_normal(points.shape)


def _inputs(cfg, data, rng=None, mode="pair"):
    parts_x, parts_y = [], []
    if "xyz" in cfg.inputs:
        px, py = data.mesh_x.vertices, data.mesh_y.vertices
        if rng is not None:
            T = random_transform(rng) if mode == "pair" else None
            px, py = augment(px, rng, T), augment(py, rng, T)
        parts_x.append(px)
        parts_y.append(py)
    parts_x.append(data.intrinsic_x)
    parts_y.append(data.intrinsic_y)
    return np.hstack(parts_x), np.hstack(parts_y)


def forward(tape, P, data, cfg, X, Y):
    """Run the network on one pair; returns a dict of tape values."""
    n_layers = len(cfg.widths) + 1
    Fx = encoder(tape, P, X, n_layers)
    Fy = encoder(tape, P, Y, n_layers)
    out = {"Fx": Fx, "Fy": Fy}
    if cfg.attention:
        Rx, Ry = cross_attention(tape, P, tape.rows(Fx, data.samples_x), tape.rows(Fy, data.samples_y), cfg)
        Fx = tape.const(data.interp_x) @ Rx
        Fy = tape.const(data.interp_y) @ Ry
        out["p_x"] = overlap_head(tape, P, Fx)
        out["p_y"] = overlap_head(tape, P, Fy)
    out["FxR"], out["FyR"] = Fx, Fy
    A = tape.const(data.basis_y.pinv) @ Fy
    B = tape.const(data.basis_x.pinv) @ Fx
    out["A"], out["B"] = A, B
    out["C"] = diff_fmap_layer(tape, A, B, data.mask, cfg.lam)
    return out


def step_loss(tape, P, data, net, loss, rng=None, augment_mode="pair"):
    """Forward pass plus the configured loss; returns (total, terms, outputs)."""
    X, Y = _inputs(net, data, rng, augment_mode)
    out = forward(tape, P, data, net, X, Y)
    if loss.mode == "unsupervised":
        mask_rev = build_mask(MaskSpec(net.mask, data.basis_x.evals, data.basis_y.evals, net.gamma))
        C21 = diff_fmap_layer(tape, out["B"], out["A"], mask_rev, net.lam)
        total, bij, orth = loss_unsupervised(tape, out["C"], C21, data.rank, loss.alpha_bij, loss.alpha_orth)
        return total, {"spec": 0.0, "nce": 0.0, "over": 0.0}, out
    if data.C_gt is None:
        raise ValueError("supervised training needs ground truth")
    spec = loss_spectral(tape, out["C"], data.C_gt) if loss.w_spec else None
    nce = loss_nce(tape, out["FxR"], out["FyR"], data.nce_pairs, loss.tau) if loss.w_nce else None
    over = None
    if loss.w_over and "p_x" in out:
        over = loss_overlap(tape, out["p_x"], out["p_y"], data.label_x, data.label_y)
    total = loss_total(tape, spec, nce, over, loss)
    terms = {k: (float(v.data) if v is not None else 0.0)
             for k, v in (("spec", spec), ("nce", nce), ("over", over))}
    return total, terms, out


class Adam:
    """Adam with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass(eq=False)
class TrainResult:
    params: dict
    history: list

    def save_history(self, path, comments=()):
        with open(path, "w", newline="") as fh:
            for c in comments:
                fh.write(f"# {c}\n")
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for row in self.history:
                w.writerow([row["step"]] + [repr(row[c]) for c in HISTORY_COLUMNS[1:]])


def input_dim(net, data):
    return (3 if "xyz" in net.inputs else 0) + data.intrinsic_x.shape[1]


def train(pairs, net=None, loss=None, epochs=1, augment_inputs=True, params=None, shuffle=True,
          augment_mode="pair"):
    """Train on a list of :class:`PairData`, one pair per step.

    Parameters are initialized from ``net.seed`` unless given. Every
    random draw (initialization, pair order, augmentation) comes from that
    seed, so two runs with the same arguments give bitwise-identical
    histories.
    """
    net = net or ToyNetConfig()
    loss = loss or LossConfig()
    if not pairs:
        raise ValueError("empty training set")
    if loss.mode == "unsupervised" and net.attention:
        # the refiner and overlap head are disabled without supervision
        net = ToyNetConfig(**{**net.__dict__, "attention": False})
        pairs = [prepare_pair(d.mesh_x, d.mesh_y, d.gt, net, loss, d.basis_x, d.basis_y) for d in pairs]
    rng = _rng(net.seed)
    if params is None:
        params = init_params(net, input_dim(net, pairs[0]), rng)
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    opt = Adam(params, net.lr)
    history = []
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(pairs)) if shuffle else np.arange(len(pairs))
        for i in order:
            step += 1
            tape = Tape()
            P = {k: tape.param(v, k) for k, v in params.items()}
            bad = [k for k, v in params.items() if not np.all(np.isfinite(v))]
            if bad:
                raise TrainingDiverged(f"non-finite parameters {bad} at step {step}")
            try:
                total, terms, _ = step_loss(tape, P, pairs[i], net, loss,
                                            rng if augment_inputs else None, augment_mode)
            except (np.linalg.LinAlgError, FloatingPointError) as err:
                raise TrainingDiverged(f"numerical failure at step {step} (pair {i}): {err}") from err
            tv = float(total.data)
            if not np.isfinite(tv):
                raise TrainingDiverged(f"non-finite loss at step {step} (pair {i}): {terms}, total={tv}")
            grads = tape.backward(total)
            opt.update(params, grads)
            history.append({"step": step, **terms, "total": tv})
    return TrainResult(params, history)


def predict(params, data, net=None):
    """Functional map, point map (x to y) and overlap probabilities."""
    net = net or ToyNetConfig()
    tape = Tape()
    P = {k: tape.const(v) for k, v in params.items()}
    X, Y = _inputs(net, data)
    out = forward(tape, P, data, net, X, Y)
    C = out["C"].data
    p2p = fmap_to_p2p(C, data.basis_y, data.basis_x)
    res = {"C": C, "p2p": p2p, "features_x": out["FxR"].data, "features_y": out["FyR"].data}
    if "p_x" in out:
        res["overlap_x"] = out["p_x"].data[:, 0]
        res["overlap_y"] = out["p_y"].data[:, 0]
    return res


def feature_magnitude_report(F_before, F_after, overlap, threshold=None, rel=0.05):
    """Fraction of small-norm features inside and outside the overlap.

    A row counts as small when its L2 norm is at most ``threshold`` (by
    default ``rel`` times the median row norm of the same feature set).
    Fractions over an empty region are NaN and flagged in ``undefined``.
    """
    overlap = np.asarray(overlap, dtype=bool)
    out = {"undefined": []}
    for tag, F in (("before", F_before), ("after", F_after)):
        nrm = np.linalg.norm(np.asarray(F, dtype=float), axis=1)
        thr = rel * np.median(nrm) if threshold is None else threshold
        small = nrm <= thr
        for region, sel in (("inside", overlap), ("outside", ~overlap)):
            key = f"{region}_{tag}"
            if sel.any():
                out[key] = float(small[sel].mean())
            else:
                out[key] = float("nan")
                out["undefined"].append(key)
    return out
