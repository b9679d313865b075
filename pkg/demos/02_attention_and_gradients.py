"""One attention layer by hand, then a gradient check of the full model.

Run: python demos/02_attention_and_gradients.py
"""
import numpy as np

from mtgat import autodiff as ad
from mtgat.graphbuild import graph_from_lengths
from mtgat.model import EdgeSet, ModelConfig, forward_tensors, init_params, mtgat_layer, raw_attention
from mtgat.seqdata import Modality, MultimodalSample
from mtgat.training import loss_for_task

# Node 0 has features 2, its two neighbours 1 and 3.  With a = [1, 1] the
# raw scores are 2 + 1 = 3 and 2 + 3 = 5.
print("raw scores", raw_attention([2], [1], [1, 1]), raw_attention([2], [3], [1, 1]))

# The same thing through the layer.  Features live in column 0 of a width-2
# embedding; the attention row [1, 0, 1, 0] picks column 0 of target and source.
cfg = ModelConfig(d_emb=2, heads=1, layers=1, input_dims=(1, 1, 1), head_hidden=0,
                  edge_type_mode="untyped1", pruning_mode="none", enabled_modalities=("text",))
g = graph_from_lengths((1, 1, 3), (Modality.TEXT,))
edges = EdgeSet(np.array([1, 2]), np.array([0, 0]), np.full(2, 8, np.int8), np.ones(2, np.int8))
tensors = {"layer0.M.text": np.eye(2), "layer0.attn.h0": np.array([[1.0, 0.0, 1.0, 0.0]])}
x = ad.Tensor(np.array([[2.0, 0.0], [1.0, 0.0], [3.0, 0.0]]))
z, rec = mtgat_layer(g, edges, x, tensors, 0, cfg)
print("attention", rec.alpha[:, 0].round(4), "-> new feature of node 0:", round(z.data[0, 0], 4))

# Reverse mode against central differences on a real model, every parameter.
cfg = ModelConfig(d_emb=8, heads=2, layers=2, input_dims=(3, 4, 5), head_hidden=8, pruning_mode="none")
rng = np.random.default_rng(0)
sample = MultimodalSample("demo", {m: rng.standard_normal((n, cfg.input_dims[m]))
                                   for m, n in zip(Modality, (2, 3, 4))}, 1.5)


def loss(tape, params):
    out, *_ = forward_tensors(params, sample, cfg)
    return loss_for_task(out, sample.label, cfg.task)


report = ad.finite_diff_check(loss, init_params(cfg, 3), step=1e-5, tolerance=1e-4)
print(f"gradient check over {report.n_checked} parameters: max relative error {report.max_rel_error:.1e}",
      "(ok)" if report.passed else "(FAILED)")
