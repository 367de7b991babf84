"""
One stroke sequence, three utensils
===================================

The same coarse decomposition is rendered with a round pen, a flat marker
and a speed-dependent brush. Each footprint model changes how much of the
glyph the strokes cover.
"""
import math
from pathlib import Path

from callikit import glyphs, raster
from callikit.decompose import decompose_glyph
from callikit.metrics import iou
from callikit.utensil import BRUSH, FLAT_MARKER, FUDE_PEN, UtensilModel, UtensilState, footprint

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

tools = {
    "pen": UtensilModel(FUDE_PEN, r=0.01, r_max=0.5),
    "marker": UtensilModel(FLAT_MARKER, r=0.005, l=0.03, theta=math.pi / 4, r_max=0.2),
    "brush": UtensilModel(BRUSH, r=0.02, l=0.04, drag=0.35, r_max=0.1),
}

# single stamps first: footprint pixel counts at rest and while moving
for name, m in tools.items():
    rest = footprint(UtensilState(m, (0.5, 0.5), m.theta, 0.0), 0.04)
    moving = footprint(UtensilState(m, (0.5, 0.5), 0.0, 1.0), 0.04)
    print(f"{name:7s} stamp at rest {len(rest):4d} px, moving {len(moving):4d} px")

img, _ = glyphs.synthetic_glyph("two")
dec, _ = decompose_glyph(img)
target = raster.binarize(img)
for name, m in tools.items():
    drawing = raster.render_strokes(dec.sequence(), m)
    raster.save_image(drawing, out / f"two_{name}.png")
    print(f"{name:7s} IoU {iou(drawing >= 0.5, target):.3f}")
