"""
Frequency-dynamic convolution, piece by piece
=============================================

Build one multi-dilated dynamic layer, look at the per-frequency attention
it computes, and confirm the identities that make the layer family hang
together: a single basis kernel collapses to a plain convolution, and the
output is NOT equivariant to shifts along frequency (that asymmetry is the
whole point).
"""

from fractions import Fraction

import numpy as np

from freqdyn import autodiff as ad
from freqdyn.autodiff import Tensor
from freqdyn.dynamic import (AttentionHeadConfig, BranchSpec, DilationSpec,
                             MDFDConv, MDFDLayerConfig, format_branch_specs,
                             parse_branch_specs)

rng = np.random.default_rng(7)

# A branch-shape string describes every variant with one grammar. "(1)" is a
# plain dynamic branch, "(2,3)" dilates the last two basis kernels along
# frequency by 2 and 3.
specs = parse_branch_specs("(1)x2+(2,3)", k=4)
print("parsed branches:", [s.expand() for s in specs])
print("canonical text: ", format_branch_specs(specs))

# Three dynamic branches cover 3/8 of the output channels; a static
# convolution fills the remaining 5/8.
config = MDFDLayerConfig(
    c_in=8, c_out=16,
    branches=tuple(BranchSpec(Fraction(1, 8), s) for s in specs),
    attention=AttentionHeadConfig())
print("branch channels:", config.branch_channels,
      "+ static", config.static_channels)

layer = MDFDConv(config, rng, dtype=np.float64)
x = Tensor(rng.normal(size=(1, 8, 20, 32)))
out = layer.forward(x)
print("input -> output:", x.shape, "->", out.shape)

# The attention head emits one softmax weighting over the K basis kernels
# at every frequency bin. Different bins choose different kernel blends.
attn = layer.branches[0].attention.forward(x).data[0]     # [K, F]
print("attention column sums (should be 1):",
      np.round(attn.sum(axis=0)[:5], 6))
print("kernel weights at bin  0:", np.round(attn[:, 0], 3))
print("kernel weights at bin 16:", np.round(attn[:, 16], 3))
print("kernel weights at bin 31:", np.round(attn[:, 31], 3))

# Identity 1: with a single basis kernel the softmax is exactly one and the
# branch is an ordinary convolution.
cfg1 = MDFDLayerConfig(c_in=8, c_out=16,
                       branches=(BranchSpec(Fraction(1),
                                            DilationSpec((), k=1)),))
single = MDFDConv(cfg1, rng, dtype=np.float64)
plain = ad.conv2d(x, single.branches[0].kernels[0], single.branches[0].bias)
gap = np.max(np.abs(single.forward(x).data - plain.data))
print("K=1 vs plain conv, max abs difference:", gap)

# Identity 2 (a non-identity, really): shifting the input along frequency
# does not shift the output, because attention depends on where content
# sits on the frequency axis.
rolled = Tensor(np.roll(x.data, 4, axis=3))
shift_gap = np.max(np.abs(layer.forward(rolled).data
                          - np.roll(layer.forward(x).data, 4, axis=3)))
print("frequency-shift mismatch (should be large):", round(shift_gap, 4))

# Time shifts, by contrast, commute with the layer away from the padded
# edges: attention pools over time, so it sees the same summary.
rolled_t = Tensor(np.roll(x.data, 5, axis=2))
interior = np.abs(layer.forward(rolled_t).data
                  - np.roll(layer.forward(x).data, 5, axis=2))[:, :, 6:-6]
print("time-shift mismatch in the interior:", np.max(interior))
