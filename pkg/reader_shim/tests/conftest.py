import threading

import pytest

from reader_shim.fusion import FusionReader, ShimConfig
from reader_shim.service import create_server
from reader_shim.tinymodel import VOCAB_WORDS, build_tiny_checkpoint


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "tiny"
    build_tiny_checkpoint(path, seed=7)
    return str(path)


@pytest.fixture(scope="session")
def reader(checkpoint):
    return FusionReader(ShimConfig(checkpoint=checkpoint, max_passages=8))


@pytest.fixture(scope="session")
def server(checkpoint):
    srv = create_server(ShimConfig(checkpoint=checkpoint, max_passages=8), port=0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


def vocab_sentence(rng, n_words):
    return " ".join(rng.choice(VOCAB_WORDS) for _ in range(n_words))
