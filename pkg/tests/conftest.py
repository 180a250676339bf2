import pytest

from fedbpt.oracle import SyntheticTaskConfig, generate_task

DESK_TASK = SyntheticTaskConfig(
    vocab_size=100,
    embed_dim=20,
    prompt_tokens=5,
    num_classes=4,
    sub_dim=10,
    train_per_class=40,
    test_per_class=50,
)


@pytest.fixture(scope="session")
def desk_task():
    """One shared small task; tests must not mutate it."""
    return generate_task(DESK_TASK, seed=1234)
