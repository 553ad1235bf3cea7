import numpy as np
import pytest

from sigtraj.errors import InvalidInputError
from sigtraj.paths import (
    Path,
    path_from_csv,
    path_from_json,
    path_to_csv,
    path_to_json,
    subdivide,
)


def test_csv_roundtrip_exact():
    rng = np.random.default_rng(0)
    p = Path.from_vertices(rng.normal(size=(7, 3)), times=np.sort(rng.uniform(0, 5, 7)))
    q = path_from_csv(path_to_csv(p))
    np.testing.assert_array_equal(q.times, p.times)
    np.testing.assert_array_equal(q.vertices, p.vertices)


def test_csv_header():
    p = Path.from_vertices([[0.0, 1.0], [2.0, 3.0]])
    assert path_to_csv(p).splitlines()[0] == "t,x1,x2"


def test_csv_rejects_missing_header():
    with pytest.raises(InvalidInputError):
        path_from_csv("a,b\n0,1\n")


def test_json_roundtrip():
    p = Path.from_vertices([[0.0, 1.0], [0.5, -1.0], [2.0, 0.25]])
    q = path_from_json(path_to_json(p))
    np.testing.assert_array_equal(q.vertices, p.vertices)
    np.testing.assert_array_equal(q.times, p.times)


def test_subdivide_preserves_geometry():
    p = Path.from_vertices([[0.0, 0.0], [1.0, 2.0]])
    fine = subdivide(p, 3)
    assert fine.n_vertices == 5
    np.testing.assert_allclose(fine.total_variation(), p.total_variation(), atol=1e-12)


def test_increments_and_variation():
    p = Path.from_vertices([[0.0, 0.0], [3.0, 4.0]])
    assert p.total_variation() == pytest.approx(5.0)
