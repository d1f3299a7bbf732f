import numpy as np
import pytest

from claimfilter.core import make_document


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_labeled_doc(rng, doc_id="d", group="g", m=1, n_max=8):
    n = int(rng.integers(1, n_max + 1))
    p = rng.random(n)
    scores = np.clip(p[:, None] + rng.normal(0, 0.05, (n, m)), 0, 1)
    labels = (rng.random(n) < p).astype(int)
    return make_document(doc_id, group, scores.tolist(), labels.tolist(), p.tolist())
