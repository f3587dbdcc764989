"""Train the toy feature network on a handful of cut pairs.

The network maps per-vertex inputs to features, lets the two shapes
exchange information through cross-attention, predicts an overlap
probability per vertex and solves for the functional map inside the
computation graph. Training signal comes from the ground-truth map, a
contrastive term on matched points and the overlap labels.

This takes about a minute on one core.
"""

from partialfm.bench.evaluate import benchmark_pairs
from partialfm.learn.losses import LossConfig
from partialfm.learn.nn import ToyNetConfig
from partialfm.learn.train import predict, prepare_synth, train
from partialfm.refine import iou

net = ToyNetConfig(k=30)
loss = LossConfig()
cases = benchmark_pairs(6, k=30, seed=3)
data = [prepare_synth(c.pair, net, loss, basis_full=c.basis_full) for c in cases]
train_set, test_set = data[:4], data[4:]

res = train(train_set, net, loss, epochs=40)
for row in res.history[::40] + res.history[-1:]:
    print(f"step {row['step']:4d}  total {row['total']:.4f}  spec {row['spec']:.4f}  "
          f"nce {row['nce']:.4f}  overlap {row['over']:.4f}")

print()
for c, d in zip(cases[4:], test_set):
    out = predict(res.params, d, net)
    err = c.errors(out["p2p"]).mean()
    # every partial vertex overlaps; the full shape is where the head has work to do
    ovl = iou(out["overlap_y"] > 0.5, d.label_y > 0.5, c.pair.full.vertex_mass)
    print(f"{c.name}: mean error {err:.4f}, overlap IOU on the full shape {ovl:.3f}")
