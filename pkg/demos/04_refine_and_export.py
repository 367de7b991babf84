"""
Refine with a brush policy, then export for a plotter
=====================================================

A short fine-tuning run on the "+" glyph, a rollout of the learned policy,
a pen-height calibration from measured widths, and the final control CSV.
The run is far shorter than a real training budget; it shows the plumbing.
"""
from pathlib import Path

from callikit import glyphs, pipeline, raster
from callikit.decompose import decompose_glyph
from callikit.env import EnvConfig
from callikit.sac import SacConfig
from callikit.utensil import UtensilModel

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

img, _ = glyphs.synthetic_glyph("plus")
dec, _ = decompose_glyph(img)
brush = UtensilModel.from_dict(pipeline.DEFAULT_CONFIG["utensil"])
env_cfg = EnvConfig()

# zero offsets reproduce the coarse drawing; that is the baseline to beat
env0, ret0 = pipeline.refine(None, img, dec, brush, env_cfg)
print("coarse IoU", round(env0.r_fin / 80, 4), "return", round(ret0, 3))

cfg = SacConfig(batch=256, epochs=4, steps_per_epoch=1500)
result = pipeline.finetune([(img, dec)], brush, env_cfg, cfg, seed=0)
env1, ret1 = pipeline.refine(result.agent, img, dec, brush, env_cfg)
print("refined IoU", round(env1.r_fin / 80, 4), "return", round(ret1, 3))
raster.save_image(env1.canvas, out / "plus_refined.png")

# pen height is linear in the half-width: z = a*r + b, fitted from (z, width) samples in mm
calib = pipeline.fit_z_r([(10.0, 0.4), (8.0, 4.2), (6.0, 7.9), (4.0, 12.1)])
print(f"z = {calib.a:.3f} r + {calib.b:.3f}  (rms {calib.rms:.3f} mm)")

seq = pipeline.export_control(env1.refined_paths(), calib, origin=(100.0, 50.0), scale_mm=80.0,
                              utensil=brush.kind)
seq.write(out / "plus_control.csv")
print(seq.to_csv().splitlines()[:5])
print(len(seq.rows), "rows,", sum(1 for r in seq.rows if r[4] == 0), "pen-up")
