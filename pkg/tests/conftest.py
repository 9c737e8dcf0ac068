import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lumisplit.benchmark import make_toy_dataset
from lumisplit.data import ClipPair, DegradationParams, MotionSpec, make_clip_pair, make_test_pattern


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def small_pair(rng) -> ClipPair:
    """16x16, T=5 clip pair with mild motion and no noise (fast, exact)."""
    base = make_test_pattern(16, 16, rng)
    motion = MotionSpec(dx_per_frame=0.7, dy_per_frame=-0.4, rotate_deg_per_frame=1.0)
    params = DegradationParams(gamma=2.2, scale=0.3, read_noise_sigma=0.0, shot_noise_scale=0.0, seed=5)
    return make_clip_pair(base, 5, motion, params, "small", rng_seed=11)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory) -> tuple[Path, Path]:
    """The benchmark datasets: 16 training clips + 4 held-out clips, 64x64, T=5."""
    root = tmp_path_factory.mktemp("toydata")
    train = make_toy_dataset(root / "train", 16, seed=100, prefix="train")
    heldout = make_toy_dataset(root / "heldout", 4, seed=200, prefix="held")
    return train, heldout
