import numpy as np
import pytest

from delayspace.synthetic import Cluster, SyntheticSpec, fr_clusters, generate


def cross_continent_fixture(seed, tokyo_rows=4, cluster_width=14):
    """47x80 matrix whose last row (Tokyo) is inflated 40-56 ms to 7 Paris prefixes."""
    rng = np.random.default_rng(1000 + seed)
    rows = fr_clusters(25, 47 - tokyo_rows) + [Cluster(2516, "Tokyo", "JP", "AS", tokyo_rows)]
    cols = (fr_clusters(25, 80 - cluster_width, asn_offset=100)
            + [Cluster(12670, "Paris", "FR", "EU", cluster_width)])
    means = rng.uniform(2, 40, (26, 26))
    means[25] = rng.uniform(210, 222, 26)
    first = 80 - cluster_width
    anomalies = [(46, j, float(rng.uniform(40, 56))) for j in range(first, first + 7)]
    spec = SyntheticSpec(47, 80, rows, cols, cluster_means=means.tolist(),
                         anomalies=anomalies, seed=seed)
    return generate(spec)


@pytest.fixture
def cross_continent():
    return cross_continent_fixture


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
