import pytest

from reportex.corpus import (
    PATHOLOGY_SCHEMA,
    RADIOLOGY_SCHEMA,
    Task,
    default_corpus_spec,
    generate_synthetic_corpus,
)


@pytest.fixture(scope="session")
def radiology_schema():
    return RADIOLOGY_SCHEMA


@pytest.fixture(scope="session")
def pathology_schema():
    return PATHOLOGY_SCHEMA


@pytest.fixture(scope="session")
def small_radiology_corpus():
    """200 short synthetic radiology reports with gold labels."""
    spec = default_corpus_spec(Task.RADIOLOGY, 200, seed=11)
    return generate_synthetic_corpus(spec)
