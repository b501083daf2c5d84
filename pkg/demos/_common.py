"""Shared plumbing for the demo scripts.

Every demo is runnable on its own; the ones that need a trained model
call quick_model(), which trains a small net once and caches the
checkpoint under demo_out/shared/ so reruns start instantly.
"""

import os
import sys
from pathlib import Path

# keep the demos single-core and reproducible, same as the test suite
for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_v, "1")

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from irispad.model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from irispad.synthdata import train_test_splits
from irispad.train import TrainConfig, train

OUT_ROOT = Path(__file__).resolve().parent / "demo_out"

DEMO_CONFIG = ModelConfig(input_size=48)
N_TRAIN, N_TEST, DATA_SEED = 300, 120, 7


def out_dir(name):
    d = OUT_ROOT / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def demo_data():
    return train_test_splits(N_TRAIN, N_TEST, base_seed=DATA_SEED, size=96)


def quick_model(epochs=20, verbose=True):
    """Train (or reload) the small shared demo model."""
    shared = out_dir("shared")
    ckpt = shared / "model.ckpt"
    if ckpt.exists():
        if verbose:
            print(f"reusing cached model {ckpt}")
        return load_checkpoint(ckpt)
    train_set, _ = demo_data()
    model = build_model(DEMO_CONFIG, seed=1)
    if verbose:
        print(f"training demo model: {len(train_set)} images, {epochs} epochs ...")
    train(model, train_set, TrainConfig(epochs=epochs, seed=1), out_dir=shared)
    save_checkpoint(model, ckpt)
    return model
