"""Mask and loss ablations on the synthetic benchmark."""

import logging
from dataclasses import dataclass

import numpy as np

from ..fmap import MASK_KINDS
from ..pipeline import descriptor_pair, match
from .evaluate import PERCENT_SCALE, benchmark_pairs, format_table

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("full", "no_spec", "no_nce", "no_over")
EXPECTED_WORST = "no_spec"


@dataclass
class AblationTable:
    """One ablation study: rows of (variant, mean error, error x 100)."""
    study: str
    rows: list
    note: str = ""

    def error(self, variant):
        for name, err, *_ in self.rows:
            if name == variant:
                return err
        raise KeyError(variant)

    def text(self):
        body = format_table(("variant", "mean_error", "x100"), self.rows)
        return f"[{self.study}]\n{body}" + (f"\n{self.note}" if self.note else "")


def mask_ablation(cases, features="wks", gamma=0.5, lam=100.0, normalize_mask=False, m=64, seed=0):
    """Mean normalized geodesic error of each mask over the pair set."""
    errs = {k: [] for k in MASK_KINDS}
    for c in cases:
        fs, ft = descriptor_pair(features, c.basis_full, c.basis_part, m=m, seed=seed,
                                 meshes=(c.pair.full, c.pair.part), gt=c.pair.gt)
        for kind in MASK_KINDS:
            _, p2p = match(c.basis_full, c.basis_part, fs, ft, kind, gamma, lam, normalize_mask)
            errs[kind].append(float(np.mean(c.errors(p2p))))
    rows = [(k, float(np.mean(v)), float(np.mean(v)) * PERCENT_SCALE) for k, v in errs.items()]
    return AblationTable("mask", rows)


def _variant_loss(base, variant):
    from ..learn.losses import LossConfig
    d = dict(base.__dict__)
    if variant != "full":
        d[{"no_spec": "w_spec", "no_nce": "w_nce", "no_over": "w_over"}[variant]] = 0.0
    return LossConfig(**d)


def loss_ablation(train_cases, test_cases, net, loss, epochs, augment=True, augment_mode="pair"):
    """Train one toy network per loss knockout and evaluate on ``test_cases``."""
    from ..learn.train import predict, prepare_synth, train
    data = {id(c): prepare_synth(c.pair, net, loss, basis_full=c.basis_full)
            for c in list(train_cases) + list(test_cases)}
    rows = []
    for variant in LOSS_VARIANTS:
        res = train([data[id(c)] for c in train_cases], net, _variant_loss(loss, variant), epochs,
                    augment_inputs=augment, augment_mode=augment_mode)
        errs = [float(np.mean(c.errors(predict(res.params, data[id(c)], net)["p2p"])))
                for c in test_cases]
        rows.append((variant, float(np.mean(errs)), float(np.mean(errs)) * PERCENT_SCALE))
        logger.info("loss ablation %s: %.4f", variant, rows[-1][1])
    return AblationTable("loss", rows, note=f"{EXPECTED_WORST}: expected worst (training without "
                                             "the spectral term does not converge to the map)")


def ablation_harness(cfg):
    """Run the studies listed in ``cfg["ablation"]["studies"]``.

    ``cfg`` is a resolved run configuration (see :mod:`partialfm.config`).
    Returns a list of :class:`AblationTable`.
    """
    from ..config import loss_config, net_config
    out = []
    ab, data = cfg["ablation"], cfg["data"]
    if "mask" in ab["studies"]:
        cases = benchmark_pairs(ab["n_pairs"], data["kind"], cfg["seed"], cfg["basis"]["k"],
                                tuple(data["partiality"]), tuple(data["bases"]), data["n_seeds"])
        out.append(mask_ablation(cases, ab["features"], cfg["fmap"]["gamma"], cfg["fmap"]["lambda"],
                                 cfg["fmap"]["normalize_mask"], cfg["features"]["m"], cfg["seed"]))
    if "loss" in ab["studies"]:
        net = net_config(cfg)
        n_tr, n_te = data["n_pairs"], data["n_test"]
        cases = benchmark_pairs(n_tr + n_te, data["kind"], cfg["seed"], net.k,
                                tuple(data["partiality"]), tuple(data["bases"]), data["n_seeds"])
        out.append(loss_ablation(cases[:n_tr], cases[n_tr:], net, loss_config(cfg),
                                 cfg["train"]["epochs"], cfg["train"]["augment"],
                                 cfg["train"]["augment_mode"]))
    return out


def tables_to_rows(tables):
    return [(t.study, name, err, x100) for t in tables for name, err, x100 in t.rows]
