"""Build the typed graph for one small sample and look at it.

Run: python demos/01_graph_and_alignment.py
"""
import numpy as np

from mtgat.graphbuild import PHI_LABELS, Temporal, graph_from_lengths, pseudo_align

# Audio has 7 steps, video 3, text 5.  The shorter sequence of each pair is
# split into buckets and the longer one is windowed over them.
plan = pseudo_align(7, 3)
print("7 audio steps over 3 video buckets")
print("  stride", plan.stride, "kernel", plan.width)
for b, (s, e) in enumerate(plan.windows):
    print(f"  video {b} is simultaneous with audio {list(range(s, e))}")

plan = pseudo_align(7, 5)
print("7 over 5 buckets:", plan.windows)

g = graph_from_lengths((7, 3, 5))
print()
print(g.n_nodes, "nodes,", g.n_edges, "edges (every ordered pair, self-loops included)")

# tau for every (target, source) pair, drawn as a character grid
chars = {Temporal.PAST: "<", Temporal.PRESENT: "=", Temporal.FUTURE: ">"}
tau = np.empty((g.n_nodes, g.n_nodes), dtype=int)
tau[g.dst, g.src] = g.tau
labels = [f"{'AVT'[m]}{p}" for m, p in zip(g.node_modality, g.node_position)]
print()
print("    " + " ".join(f"{lab:>3}" for lab in labels))
for i, row in enumerate(tau):
    print(f"{labels[i]:>3} " + " ".join(f"{chars[Temporal(t)]:>3}" for t in row))
print("row = target, column = source; '<' source in the past, '>' in the future")

# how often each of the 27 edge types occurs
counts = np.zeros((9, 3), dtype=int)
np.add.at(counts, (g.phi.astype(int), g.tau.astype(int)), 1)
print()
print("phi    past present future")
for phi, row in enumerate(counts):
    print(f"{PHI_LABELS[phi]:<5}", " ".join(f"{c:>6}" for c in row))
