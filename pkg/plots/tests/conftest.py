import pytest

from artifact_helpers import write_dump, write_metrics


@pytest.fixture
def metrics_file(tmp_path):
    """Four events with exactly representable r_t values (mean 2.5)."""
    path = tmp_path / "metrics.csv"
    write_metrics(path, [
        [0.5, "arrival", 1.0, 1.0, 1.0, 0.1, -1.0],
        [1.0, "arrival", 2.0, 2.0, 1.0, 0.2, -2.0],
        [1.5, "departure", 3.0, 2.0, "", 0.0, -3.0],
        [2.0, "arrival", 4.0, 3.0, 0.5, 0.3, -10.0],
    ])
    return str(path)


@pytest.fixture
def dump_pair(tmp_path):
    a = tmp_path / "pre.json"
    b = tmp_path / "post.json"
    write_dump(a, [0, 1], [0, 1, 2],
               [[0.25, 0.5, 0.25], [0.125, 0.25, 0.625]])
    write_dump(b, [0, 1], [0, 1, 2],
               [[0.0625, 0.125, 0.8125], [0.5, 0.25, 0.25]])
    return str(a), str(b)
