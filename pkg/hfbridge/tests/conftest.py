import pytest

from hfbridge import CheckpointModel, materialize_tiny_checkpoint


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory) -> str:
    return materialize_tiny_checkpoint(
        str(tmp_path_factory.mktemp("ckpt") / "tiny"), seed=0)


@pytest.fixture(scope="session")
def model(checkpoint_dir) -> CheckpointModel:
    return CheckpointModel(checkpoint_dir, device="cpu")
