import hashlib

import numpy as np
import pytest

from edgesync.core_types import HyperParams, Sample, ValidationError, make_rng, split_seed, stable_argmax


def test_split_seed_matches_blake2b():
    digest = hashlib.blake2b((7).to_bytes(8, "little") + b"teacher", digest_size=8).digest()
    assert split_seed(7, "teacher") == int.from_bytes(digest, "little")


def test_split_seed_separates_tags():
    assert split_seed(1, "a") != split_seed(1, "b")
    assert split_seed(1, "a") != split_seed(2, "a")


def test_split_seed_rejects_empty_tag():
    with pytest.raises(ValidationError):
        split_seed(1, "")


def test_make_rng_is_reproducible():
    a = make_rng(3, "x", "y").random(5)
    b = make_rng(3, "x", "y").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_rng(3, "y", "x").random(5))


def test_stable_argmax_takes_lowest_index_on_ties():
    assert stable_argmax(np.array([0.2, 0.4, 0.4])) == 1


@pytest.mark.parametrize("bad", [(0.0, 0.9, 0.0), (0.1, 1.0, 0.0), (0.1, 0.5, -1.0)])
def test_hyperparams_validation(bad):
    with pytest.raises(ValidationError):
        HyperParams(*bad)


def test_sample_checks_probabilities():
    x = np.zeros(3)
    Sample(0, 0, 0.0, x, 1, 1, np.array([0.2, 0.5, 0.3]))
    with pytest.raises(ValidationError):
        Sample(0, 0, 0.0, x, 1, 0, np.array([0.2, 0.5, 0.3]))
    with pytest.raises(ValidationError):
        Sample(0, 0, 0.0, x, 1, None, np.array([0.2, 0.5, 0.4]))
    with pytest.raises(ValidationError):
        Sample(0, -1, 0.0, x, 1)
