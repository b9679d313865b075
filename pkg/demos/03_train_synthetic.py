"""Train on the trigger-order task and see where attention goes.

Each sample hides one trigger row in text and one in video.  The label says
which trigger comes relatively earlier, so the model has to relate positions
across two unaligned streams.

Run: python demos/03_train_synthetic.py [epochs]
A full 30-epoch run takes about 4 minutes on one core; the default is 8.
"""
import sys

import numpy as np

from mtgat.model import ModelConfig, forward
from mtgat.seqdata import Modality, SyntheticSpec, gen_synthetic
from mtgat.training import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 8
ds = gen_synthetic(SyntheticSpec(), seed=7)
print(len(ds.split("train")), "train /", len(ds.split("val")), "val /", len(ds.split("test")), "test samples")

cfg = ModelConfig(d_emb=32, heads=4, layers=3, keep_percent=80, input_dims=(8, 8, 8), head_hidden=32)
params, history = train(ds, cfg, TrainConfig(epochs=epochs, batch_size=16, seed=1),
                        callback=lambda e, tl, vl, lr: print(f"epoch {e:2d}  train {tl:.3f}  val {vl:.3f}  lr {lr:g}"))

m = evaluate(params, ds, "test", cfg)
print(f"test acc2 {m.acc2:.3f}  acc7 {m.acc7:.3f}  f1 {m.f1:.3f}  mae {m.mae:.3f}  corr {m.corr:.3f}")

# Which edges does the last layer rely on?  Look at the edges that point at
# the text trigger node of one test sample.
s = ds.split("test")[0]
out = forward(params, s, cfg)
t_text, t_video = s.meta["trigger_text"], s.meta["trigger_video"]
lengths = s.lengths()
text_trigger = lengths[Modality.AUDIO] + lengths[Modality.VIDEO] + t_text
rec = out.attention[-1]
into = rec.edges.dst == text_trigger
order = np.argsort(-rec.alpha_avg[into])[:5]
print(f"\nsample {s.id}: label {s.label:+.0f}, prediction {out.prediction[0]:+.2f}")
print("strongest edges into the text trigger node (last layer):")
nodes = out.graph.nodes()
for i in order:
    src = nodes[rec.edges.src[into][i]]
    mark = "  <- video trigger" if src.modality == Modality.VIDEO and src.position == t_video else ""
    print(f"  from {src.modality.code}{src.position:<3} weight {rec.alpha_avg[into][i]:.3f}{mark}")
print(len(out.surviving_nodes), "of", out.graph.n_nodes, "nodes kept an incoming edge for the readout")
