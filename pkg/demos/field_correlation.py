"""How well does each joint's field value track the acceleration error of a
corrupted segment? Prints Pearson r per joint and writes the scatter data."""
import os

from motionudf import kinematics as kin
from motionudf.analysis import correlation_analysis, corrupted_segment_set
from motionudf.motion import synthetic_suite

from common import demo_model

model = demo_model()
names = kin.default_skeleton().names
noisy, clean = corrupted_segment_set(synthetic_suite(4, 64, seed=1000), 500, model.T, seed=5)
os.makedirs("runs/demo", exist_ok=True)
rep = correlation_analysis(model, noisy, clean, scatter_path="runs/demo/scatter.csv")
for joint, p in rep.per_joint.items():
    name = names[joint]
    print(f"{name:<16} r = {p.r:.3f}" if p.defined else f"{name:<16} undefined")
print(f"{rep.fraction_above(0.8):.0%} of joints have r > 0.8; scatter in runs/demo/scatter.csv")
