import string
from pathlib import Path

import numpy as np
import pytest

from prf.dataset import (
    CATEGORICAL,
    CONTINUOUS,
    Dataset,
    FeatureDescriptor,
    Schema,
    load_csv,
    load_schema,
    vertical_partition,
)

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def weather_schema():
    return load_schema(DATA_DIR / "weather.schema.json")


@pytest.fixture(scope="session")
def weather(weather_schema):
    return load_csv(DATA_DIR / "weather.csv", weather_schema)


@pytest.fixture(scope="session")
def weather_subsets(weather):
    return vertical_partition(weather)


def make_random_dataset(rng, n_rows, kinds, n_classes=2, class_signal=None):
    """Random mixed-kind classification dataset.

    ``kinds`` is a list of "categorical"/"continuous". Labels are random by
    default; pass ``class_signal=j`` to tie them loosely to column j.
    """
    labels = list(string.ascii_uppercase[:n_classes])
    cols = []
    for kind in kinds:
        if kind == CONTINUOUS:
            cols.append(np.round(rng.normal(size=n_rows), 6))
        else:
            vocab = [f"v{t}" for t in range(int(rng.integers(2, 5)))]
            cols.append(np.asarray(
                [vocab[int(rng.integers(len(vocab)))] for _ in range(n_rows)],
                dtype=object))
    if class_signal is not None and kinds[class_signal] == CONTINUOUS:
        base = cols[class_signal] > np.median(cols[class_signal])
        y = [labels[int(b)] for b in base]
    else:
        y = [labels[int(rng.integers(n_classes))] for _ in range(n_rows)]
    descr = tuple(
        FeatureDescriptor(f"f{j}", kind) for j, kind in enumerate(kinds)
    ) + (FeatureDescriptor("y", CATEGORICAL, tuple(labels)),)
    schema = Schema(descr, tuple(labels))
    rows = [tuple(cols[j][i] for j in range(len(kinds))) + (y[i],)
            for i in range(n_rows)]
    return Dataset.from_rows(schema, rows)


def make_noisy_dataset(seed, n_rows=200, n_features=5, noise=0.15):
    """Continuous dataset with a threshold rule target plus label noise."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_rows, n_features))
    clean = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    flip = rng.random(n_rows) < noise
    y = np.where(flip, 1 - clean, clean)
    labels = ("A", "B")
    descr = tuple(
        FeatureDescriptor(f"x{j}", CONTINUOUS) for j in range(n_features)
    ) + (FeatureDescriptor("y", CATEGORICAL, labels),)
    schema = Schema(descr, labels)
    rows = [tuple(np.round(x[i], 6)) + (labels[y[i]],) for i in range(n_rows)]
    return Dataset.from_rows(schema, rows)
