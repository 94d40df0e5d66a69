import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from attnseries.data import GeneratorConfig, generate  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset():
    return generate(GeneratorConfig(samples_per_class=40, grid=(6, 6), seed=3))


@pytest.fixture(scope="session")
def default_dataset():
    return generate(GeneratorConfig())


@pytest.fixture(scope="session")
def reference_runs(default_dataset):
    """Lazily trained reference models keyed by architecture, mode, seed and spec overrides."""
    from attnseries.reference import train_reference

    cache = {}

    def get(architecture, mode, seed=0, overrides=None):
        key = (architecture, mode, seed, tuple(sorted((overrides or {}).items())))
        if key not in cache:
            cache[key] = train_reference(default_dataset, architecture, mode, seed, overrides=overrides)
        return cache[key]

    return get
