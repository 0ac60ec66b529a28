import pytest

from precondlab.data import write_digits_idx


@pytest.fixture(scope="session")
def digits_idx(tmp_path_factory):
    """Offline handwritten-digit corpus in IDX layout, built once per session."""
    out = tmp_path_factory.mktemp("digits")
    return write_digits_idx(out)
