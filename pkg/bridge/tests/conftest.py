import threading
import time

import pytest
import uvicorn

from plm_bridge import BridgeConfig, build_app

BRIDGE_CFG = BridgeConfig(
    model="tiny-random",
    prompt_tokens=4,
    verbalizer=[10, 11],
    vocab_size=128,
    model_seed=7,
)


@pytest.fixture(scope="session")
def bridge_endpoint():
    """The bridge app served on an ephemeral port for the whole session."""
    app = build_app(BRIDGE_CFG)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 30
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("bridge server did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)
