"""
From a glyph image to a coarse stroke sequence
==============================================

Synthesize a "+" glyph, thin it to a skeleton, turn the skeleton into a
graph and let the beam search pick how strokes pass through the junction.
Outputs land in ``demos/out/``.
"""
from pathlib import Path

import numpy as np

from callikit import decompose, glyphs, raster
from callikit.geometry import save_strokes

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# a 256x256 glyph with values in [0, 1]; ink is 1
img, n_gt = glyphs.synthetic_glyph("plus")
raster.save_image(img, out / "plus.png")

# binarize, thin, and measure the local half-width at every ink pixel
mask = raster.binarize(img)
skeleton = raster.thin(mask)
widths = raster.distance_transform(mask)
print("ink pixels", mask.sum(), "skeleton pixels", skeleton.sum())

graph = decompose.build_skeleton_graph(skeleton, widths)
print("node degrees", sorted(n.degree for n in graph.nodes), "edges", len(graph.edges))

# the hub has degree 4; its candidate pairings come ranked by how straight they are
hub = max(range(len(graph.nodes)), key=lambda k: graph.nodes[k].degree)
for option in decompose.ranked_options(graph, hub)[:3]:
    print("pairing", option)

# search the pairings; the winner keeps both bars straight
weights = decompose.LossWeights(lambda1=0.5, lambda2=0.5)
dec = decompose.trace_strokes(graph, img, weights, beam=8)
report = decompose.composite_loss(dec, img, weights, report=True)
print("strokes", dec.stroke_count, "ground truth", n_gt)
print({k: round(v, 4) for k, v in report.as_dict().items()})

# strokes go out as one quadratic segment per line, pen-up moves included
save_strokes(out / "plus_strokes.txt", dec.sequence())
drawing = raster.render_strokes(dec.sequence(), decompose.default_utensil())
raster.save_image(drawing, out / "plus_coarse.png")
print("coarse IoU", round(float((drawing >= 0.5)[mask].sum() / ((drawing >= 0.5) | mask).sum()), 3))

# a split bar costs more than a single one: the pen-up pays the regularizer
bar, _ = glyphs.synthetic_glyph("bar")
one, _ = decompose.decompose_glyph(bar)
s = one.strokes[0]
two = decompose.Decomposition([s[: len(s) // 2], s[len(s) // 2:]])
print("bar one stroke", round(decompose.composite_loss(one, bar, weights), 4),
      "split", round(decompose.composite_loss(two, bar, weights), 4))
