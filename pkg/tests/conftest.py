import pytest

import evflow as ev


@pytest.fixture(scope="session")
def small_geometry():
    return ev.SensorGeometry(120, 90)


@pytest.fixture(scope="session")
def edge_scene(small_geometry):
    """Noiseless 2 px/ms translating edge with its ground truth."""
    spec = ev.SceneSpec(geometry=small_geometry, pattern=ev.TranslatingEdge(2.0, 0.0),
                        duration_us=50_000)
    gt = ev.generate(spec, seed=7)
    return gt


@pytest.fixture(scope="session")
def edge_accepted(small_geometry, edge_scene):
    accepted, _ = ev.filter_stream(ev.events_view(edge_scene), small_geometry)
    return accepted


def surface_from_cells(geometry, cells, p=1):
    """Hand-built active surface; cells is a list of (x, y, t_us)."""
    s = ev.ActiveSurface(geometry)
    for x, y, t in cells:
        s.update(ev.Event(x=x, y=y, t=t, p=p))
    return s
