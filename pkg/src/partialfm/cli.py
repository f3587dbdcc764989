"""Command-line front end.

Every subcommand is deterministic given its inputs and seed. Failures exit
with a nonzero status and one line on stderr of the form
``partialfm: error: kind=<Kind> message=<text>``.
"""

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import tomli
import tomli_w

from . import __version__
from .config import ConfigError, dump_config, load_config, loss_config, net_config, resolve

logger = logging.getLogger("partialfm")

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def header(seed, inputs=()):
    """Comment lines carried by every artifact: version, seed, input hashes."""
    lines = [f"partialfm {__version__}", f"seed {seed}"]
    lines += [f"input {Path(p).name} sha256 {file_hash(p)}" for p in inputs]
    return lines


def _write_lines(path, values, comments, fmt="{:.17g}"):
    body = "\n".join(fmt.format(v) for v in values)
    Path(path).write_text("".join(f"# {c}\n" for c in comments) + body + "\n")


def _load_any_mesh(spec):
    from .bench.shapes import base_shape, normalize_area
    from .mesh import load_mesh
    if spec.startswith("file:"):
        return load_mesh(spec[5:]), [spec[5:]]
    return normalize_area(base_shape(spec)), []


# --------------------------------------------------------------------------
# subcommands

def cmd_gen(args):
    from .bench.synth import gen_cut, gen_holes, gen_p2p, save_pair
    full, inputs = _load_any_mesh(args.base)
    base = args.base if not args.base.startswith("file:") else Path(args.base[5:]).stem
    if args.kind == "cut":
        pair = gen_cut(full, args.seed, args.partiality, base=base)
    elif args.kind == "holes":
        pair = gen_holes(full, args.seed, args.n_seeds, args.partiality, base=base)
    else:
        pair = gen_p2p(full, args.seed, args.partiality, base=base)
    save_pair(args.out, pair, comments=header(args.seed, inputs))
    print(f"wrote {args.out}: kind={pair.kind} partiality={pair.partiality:.4f} "
          f"full={pair.full.n_vertices} part={pair.part.n_vertices}")


def cmd_precompute(args):
    from .mesh import load_mesh
    from .spectral import mesh_basis, save_basis
    mesh = load_mesh(args.mesh)
    basis = mesh_basis(mesh, args.k, backend=args.backend)
    out = args.out if str(args.out).endswith(".npz") else f"{args.out}.npz"
    save_basis(out, basis, comments=header(0, [args.mesh]))
    print(f"wrote {out}: k={basis.k} lambda_max={basis.evals[-1]:.6g}")


def _basis_for(mesh_path, mesh, k, cache=None):
    from .spectral import load_basis, mesh_basis
    if cache:
        b = load_basis(cache, mesh)
        if b.k < k:
            raise ValueError(f"cached basis {cache} has k={b.k} < {k}")
        return b.truncate(k) if b.k > k else b
    return mesh_basis(mesh, k)


def _features(args, cfg, src, tgt, bs, bt):
    from .descriptors import FeatureMatrix, load_features
    from .fmap import load_map
    from .pipeline import descriptor_pair
    spec = args.features
    if spec.startswith("file:"):
        paths = spec[5:].split(",")
        if len(paths) != 2:
            raise ValueError("file features take two paths: file:SRC_FEATURES,TGT_FEATURES")
        fs, ft = load_features(paths[0]), load_features(paths[1])
        if fs.shape[0] != src.n_vertices or ft.shape[0] != tgt.n_vertices:
            raise ValueError("feature files do not match the meshes")
        return fs, ft, None, paths
    if spec.startswith("toy:"):
        from .learn.nn import load_params
        from .learn.train import predict, prepare_pair
        ckpt = spec[4:]
        side = Path(ckpt + ".toml")
        tcfg = load_config(side) if side.exists() else cfg
        net = net_config(tcfg)
        data = prepare_pair(tgt, src, None, net)
        res = predict(load_params(ckpt), data, net)
        ovl = (res.get("overlap_y"), res.get("overlap_x"))
        return (FeatureMatrix(res["features_y"], "learned-toy"),
                FeatureMatrix(res["features_x"], "learned-toy"), ovl, [ckpt])
    if spec == "perfect":
        if not args.gt:
            raise ValueError("--features perfect needs --gt (target-to-source ground-truth map)")
        gt = load_map(args.gt, n_tgt=src.n_vertices)
        fs, ft = descriptor_pair("perfect", bs, bt, cfg["features"]["m"], cfg["seed"], (src, tgt), gt)
        return fs, ft, None, [args.gt]
    fs, ft = descriptor_pair(spec, bs, bt, n_energies=cfg["features"]["n_energies"],
                             normalize=cfg["features"]["normalize"])
    return fs, ft, None, []


def _cfg_from(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else resolve()
    over = {}
    for attr, section, key in (("k", "basis", "k"), ("mask", "fmap", "mask"), ("gamma", "fmap", "gamma"),
                               ("lam", "fmap", "lambda"), ("overlap_threshold", "overlap", "threshold")):
        v = getattr(args, attr, None)
        if v is not None:
            over.setdefault(section, {})[key] = v
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    merged = {s: dict(cfg[s]) if isinstance(cfg[s], dict) else cfg[s] for s in cfg}
    for s, v in over.items():
        if isinstance(v, dict):
            merged[s].update(v)
        else:
            merged[s] = v
    return resolve(merged)


def cmd_match(args):
    from .fmap import save_fmap, save_map
    from .mesh import load_mesh
    from .pipeline import match
    from .refine import OverlapRegion, estimate_overlap_axiomatic
    cfg = _cfg_from(args)
    src, tgt = load_mesh(args.src), load_mesh(args.tgt)
    k = cfg["basis"]["k"]
    bs = _basis_for(args.src, src, k, args.src_basis)
    bt = _basis_for(args.tgt, tgt, k, args.tgt_basis)
    fs, ft, learned_ovl, extra = _features(args, cfg, src, tgt, bs, bt)
    f = cfg["fmap"]
    C, p2p = match(bs, bt, fs, ft, f["mask"], f["gamma"], f["lambda"], f["normalize_mask"])
    thr = cfg["overlap"]["threshold"]
    if learned_ovl is not None and learned_ovl[0] is not None:
        ovl_s, ovl_t = OverlapRegion(learned_ovl[0], thr), OverlapRegion(learned_ovl[1], thr)
    else:
        ovl_s, ovl_t = estimate_overlap_axiomatic(C, bs, bt, p2p, fs, ft, src, tgt, threshold=thr)
    comments = header(cfg["seed"], [args.src, args.tgt, *extra])
    prefix = args.out
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    save_fmap(f"{prefix}.fmap", C, comments)
    save_map(f"{prefix}.map", p2p, comments)
    _write_lines(f"{prefix}.overlap", ovl_s.prob, comments + [f"threshold {thr}", f"shape {Path(args.src).name}"])
    _write_lines(f"{prefix}.tgt.overlap", ovl_t.prob,
                 comments + [f"threshold {thr}", f"shape {Path(args.tgt).name}"])
    meta = {"src": str(Path(args.src).resolve()), "tgt": str(Path(args.tgt).resolve()), "k": k}
    dump_config(f"{prefix}.toml", cfg, comments)
    Path(f"{prefix}.pair.toml").write_text(tomli_w.dumps(meta))
    print(f"wrote {prefix}.fmap {prefix}.map {prefix}.overlap: C {C.C.shape}, "
          f"overlap on source {ovl_s.mask.mean():.3f}")


def cmd_refine(args):
    from .fmap import fmap_to_p2p, load_fmap, save_fmap, save_map
    from .mesh import load_mesh
    from .refine import partial_zoomout
    prefix = args.prefix
    with open(f"{prefix}.pair.toml", "rb") as fh:
        meta = tomli.load(fh)
    src, tgt = load_mesh(meta["src"]), load_mesh(meta["tgt"])
    C = load_fmap(f"{prefix}.fmap").C
    k_start = args.k_start or min(20, C.shape[1])
    k_end = args.k_end
    bs = _basis_for(meta["src"], src, k_end, None)
    bt = _basis_for(meta["tgt"], tgt, k_end, None)
    C0 = C[:min(k_start, C.shape[0]), :k_start]
    Cz = partial_zoomout(C0, bs, bt, steps=args.steps, k_start=k_start, k_end=k_end,
                         rank_rule=not args.no_rank_rule)
    p2p = fmap_to_p2p(Cz, bs, bt)
    out = args.out or f"{prefix}.refined"
    comments = header(0, [f"{prefix}.fmap", meta["src"], meta["tgt"]]) + \
        [f"schedule {k_start}->{k_end} in {args.steps} steps"]
    save_fmap(f"{out}.fmap", Cz, comments)
    save_map(f"{out}.map", p2p, comments)
    print(f"wrote {out}.fmap {out}.map: C {Cz.C.shape}")


def cmd_eval(args):
    from .bench.evaluate import PERCENT_SCALE, princeton_curve
    from .fmap import load_map
    from .mesh import load_mesh
    tgt = load_mesh(args.tgt)
    pred = load_map(args.pred, n_tgt=tgt.n_vertices)
    gt = load_map(args.gt, n_tgt=tgt.n_vertices)
    curve = princeton_curve(pred, gt, tgt)
    mean = curve.mean_error * (PERCENT_SCALE if args.x100 else 1.0)
    if args.out:
        curve.save_csv(args.out, header(0, [args.pred, args.gt, args.tgt]))
    unit = " (x100)" if args.x100 else ""
    print(f"mean {mean:.6g}{unit}")


def cmd_train_toy(args):
    from .bench.evaluate import benchmark_pairs
    from .learn.nn import save_params
    from .learn.train import prepare_synth, train
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = resolve({**cfg, "seed": args.seed})
    net, loss = net_config(cfg), loss_config(cfg)
    d = cfg["data"]
    cases = benchmark_pairs(d["n_pairs"], d["kind"], cfg["seed"], net.k, tuple(d["partiality"]),
                            tuple(d["bases"]), d["n_seeds"])
    data = [prepare_synth(c.pair, net, loss, basis_full=c.basis_full) for c in cases]
    t = cfg["train"]
    res = train(data, net, loss, t["epochs"], t["augment"], augment_mode=t["augment_mode"])
    comments = header(cfg["seed"], [args.config])
    save_params(args.out, res.params, comments)
    dump_config(f"{args.out}.toml", cfg, comments)
    res.save_history(f"{args.out}.history.csv", comments)
    last = res.history[-1] if res.history else {"total": float("nan")}
    print(f"wrote {args.out}: {len(res.history)} steps, final total loss {last['total']:.6g}")


def cmd_verify_theory(args):
    from .theory import run_all
    reports = run_all(seed=args.seed, k=args.k)
    for r in reports:
        print(r.line())
    if not all(r.passed for r in reports):
        raise RuntimeError("theory check failed")


def cmd_ablate(args):
    from .bench.ablation import ablation_harness, tables_to_rows
    from .bench.evaluate import write_table
    cfg = load_config(args.config)
    tables = ablation_harness(cfg)
    write_table(args.out, ("study", "variant", "mean_error", "x100"), tables_to_rows(tables),
                header(cfg["seed"], [args.config]))
    for t in tables:
        print(t.text())


# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="partialfm", description="Partial functional maps on triangle meshes.")
    p.add_argument("--version", action="version", version=f"partialfm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic partial pair")
    g.add_argument("--kind", choices=("cut", "holes", "p2p"), required=True)
    g.add_argument("--base", default="quadruped",
                   help="icosphere | capsule | quadruped | file:PATH")
    g.add_argument("--partiality", type=float, required=True,
                   help="removed area fraction (overlap fraction for p2p)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-seeds", type=int, default=3, help="hole seeds for --kind holes")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    pc = sub.add_parser("precompute", help="cache a Laplace-Beltrami basis")
    pc.add_argument("mesh")
    pc.add_argument("--k", type=int, default=60)
    pc.add_argument("--backend", choices=("auto", "dense", "sparse"), default="auto")
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=cmd_precompute)

    m = sub.add_parser("match", help="functional map and point map from SRC to TGT")
    m.add_argument("src", help="source mesh (the full shape for partial-to-full)")
    m.add_argument("tgt", help="target mesh (the partial shape)")
    m.add_argument("--features", default="wks", help="wks | hks | perfect | toy:CKPT | file:SRC,TGT")
    m.add_argument("--mask", choices=("laplacian", "slanted", "resolvent"))
    m.add_argument("--gamma", type=float)
    m.add_argument("--lambda", dest="lam", type=float)
    m.add_argument("--k", type=int)
    m.add_argument("--gt", help="target-to-source ground truth, needed by perfect features")
    m.add_argument("--src-basis", help="basis cache from precompute")
    m.add_argument("--tgt-basis")
    m.add_argument("--overlap-threshold", type=float)
    m.add_argument("--config")
    m.add_argument("--seed", type=int)
    m.add_argument("--out", required=True, help="output prefix")
    m.set_defaults(func=cmd_match)

    r = sub.add_parser("refine", help="spectral upsampling of a matched prefix")
    r.add_argument("prefix")
    r.add_argument("--steps", type=int, default=8)
    r.add_argument("--k-start", type=int)
    r.add_argument("--k-end", type=int, default=60)
    r.add_argument("--no-rank-rule", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("eval", help="Princeton curve of a point map")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("tgt", help="mesh the maps point into")
    e.add_argument("--out")
    e.add_argument("--x100", "--paper-units", dest="x100", action="store_true",
                   help="report the mean error multiplied by 100")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("train-toy", help="train the toy network")
    t.add_argument("config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train_toy)

    v = sub.add_parser("verify-theory", help="numerical checks of the feature equations")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--k", type=int, default=60)
    v.set_defaults(func=cmd_verify_theory)

    a = sub.add_parser("ablate", help="mask and loss ablations")
    a.add_argument("config")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def _fail(kind, message, code):
    msg = " ".join(str(message).split())
    print(f"partialfm: error: kind={kind} message={msg}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        return _fail("UsageError", err, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as err:
        return _fail("ConfigError", err, EXIT_USAGE)
    except FileNotFoundError as err:
        return _fail("FileNotFound", f"{err.filename}: {err.strerror}", EXIT_RUNTIME)
    except Exception as err:  # every failure ends in the one-line report
        return _fail(type(err).__name__, err, EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
