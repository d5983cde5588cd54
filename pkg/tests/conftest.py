import numpy as np
import pytest

from helideck.model import default_skeleton
from helideck.simulator import ScenarioConfig, default_camera, default_marking_map, gen_dataset, load_dataset
from helideck.yawnet import Checkpoint, YawNetConfig, arrays_from_records, train


@pytest.fixture(scope="session")
def scene():
    intr, extr = default_camera()
    return intr, extr, default_marking_map(), default_skeleton()


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cfg = ScenarioConfig(seed=5)
    train_path, test_path = gen_dataset(cfg, 800, 200, out)
    xr = arrays_from_records(load_dataset(train_path))
    xe = arrays_from_records(load_dataset(test_path))
    return (xr[0], xr[1]), (xe[0], xe[1])


@pytest.fixture(scope="session")
def small_checkpoint(small_dataset) -> Checkpoint:
    """A quickly trained model, good enough for pipeline-level tests."""
    config = YawNetConfig(seed=1, epochs=40)
    params, report = train(config, small_dataset[0], small_dataset[1])
    assert report.test_yaw_mae < 0.25, "fixture model unexpectedly weak"
    return Checkpoint(config=config, params=params, tau_rec=report.tau_rec, train_summary=report.summary())


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def full_dataset_dir(tmp_path_factory):
    """The acceptance-scale dataset: 4000 train / 1000 test records."""
    out = tmp_path_factory.mktemp("full_ds")
    gen_dataset(ScenarioConfig(seed=7), 4000, 1000, out)
    return out


@pytest.fixture(scope="session")
def full_training(full_dataset_dir):
    """Default-config training on the acceptance dataset; returns (ckpt, report, wall_s)."""
    import time

    xr = arrays_from_records(load_dataset(full_dataset_dir / "train.jsonl"))
    xe = arrays_from_records(load_dataset(full_dataset_dir / "test.jsonl"))
    config = YawNetConfig(seed=0)
    started = time.perf_counter()
    params, report = train(config, (xr[0], xr[1]), (xe[0], xe[1]))
    wall = time.perf_counter() - started
    ckpt = Checkpoint(config=config, params=params, tau_rec=report.tau_rec, train_summary=report.summary())
    return ckpt, report, wall
