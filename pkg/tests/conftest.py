import numpy as np
import pytest
from hypothesis import settings
from shapely.geometry import MultiPoint

from contact_slam.geometry import build_contour

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_convex(rng: np.random.Generator, center, radius: float, n: int = 8, id: str = ""):
    pts = np.asarray(center, dtype=float) + rng.uniform(-radius, radius, (n, 2))
    hull = MultiPoint([tuple(p) for p in pts]).convex_hull
    return build_contour(list(hull.exterior.coords)[:-1], id)


@pytest.fixture
def square():
    return build_contour([(0, 0), (10, 0), (10, 10), (0, 10)], "sq")
