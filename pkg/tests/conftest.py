import numpy as np
import pytest

from tabgsl.data import preprocess, stratified_split

from helpers import make_gaussian_dataset, make_mixed_dataset


@pytest.fixture(scope="session")
def gaussian_data():
    """Preprocessed 2-cluster dataset with its split, shared across tests."""
    raw = make_gaussian_dataset(n=300, d=10, sep=4.0, seed=0)
    split = stratified_split(raw, (0.70, 0.15, 0.15), seed=11)
    ds, scaler = preprocess(raw, split)
    return ds, split, scaler


@pytest.fixture(scope="session")
def mixed_data():
    raw = make_mixed_dataset(n=80, seed=2)
    split = stratified_split(raw, (0.70, 0.15, 0.15), seed=5)
    ds, scaler = preprocess(raw, split)
    return ds, split, scaler


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
