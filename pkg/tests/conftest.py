import numpy as np
import pytest

from sqar import SqParams, TrainConfig, build_model, synth_blobs, train


@pytest.fixture(scope="session")
def blobs_setup():
    """A small trained quantized ensemble on well-separated blobs."""
    data = synth_blobs(60, 3, 4, 8, seed=1)
    model = build_model([4, 8, 3], sq_input=SqParams(2.0, 8),
                        sq_feature=SqParams(2.0, 8), n_members=4, seed=0)
    config = TrainConfig(alpha=2.0, n_bins=8, n_members=4, epochs=6,
                         batch_size=32, seed=0, mu=0.5)
    trained, history = train(model, (data.flat, data.labels), config)
    return {"data": data, "model": trained, "history": history,
            "config": config}


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(123)
