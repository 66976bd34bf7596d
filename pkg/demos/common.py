"""Shared by the demo scripts: one desk-scale model, trained once and cached."""
import os
import time

from motionudf.motion import synthetic_suite
from motionudf.pipeline import desk_config, train_model
from motionudf.udf import load_model, save_model

MODEL_PATH = os.environ.get("DEMO_MODEL", "runs/demo/desk.ckpt")


def demo_model(path=MODEL_PATH):
    if os.path.exists(path):
        return load_model(path)
    print(f"training a desk model on 12 synthetic clips (a few minutes), caching it at {path}")
    t0 = time.perf_counter()
    model = train_model(synthetic_suite(12, 96, seed=1), desk_config())
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_model(model, path)
    print(f"  trained {len(model.joints)} joint fields in {time.perf_counter() - t0:.0f} s")
    return model
