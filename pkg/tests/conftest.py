import numpy as np
import pytest
from hypothesis import settings

from superprompt.graph import TokenSegment
from superprompt.model import ReferenceModel

# property tests share the machine with model forwards; wall-clock deadlines
# only add flakiness
settings.register_profile("no-deadline", deadline=None)
settings.load_profile("no-deadline")

VOCAB = 256


@pytest.fixture(scope="session")
def alibi_model():
    return ReferenceModel("alibi")


@pytest.fixture(scope="session")
def rotary_model():
    return ReferenceModel("rotary")


def random_segment(rng, sid, n, kind="document"):
    return TokenSegment(sid, tuple(int(t) for t in rng.integers(1, VOCAB, n)), kind)


def random_fork_inputs(rng, n_docs, max_len=12):
    """Random (preamble, documents, query, postamble) for a ForkJoin."""
    preamble = random_segment(rng, "p", int(rng.integers(2, max_len)), "preamble")
    docs = [
        random_segment(rng, f"d{i}", int(rng.integers(2, max_len)))
        for i in range(n_docs)
    ]
    query = random_segment(rng, "q", int(rng.integers(2, max_len)), "query")
    postamble = random_segment(rng, "t", int(rng.integers(1, 4)), "postamble")
    return preamble, docs, query, postamble


def unit_positions(start, n):
    return start + np.arange(n, dtype=np.float64)
