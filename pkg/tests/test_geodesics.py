import numpy as np
import pytest

from contraq.geodesics import (GeodesicPath, PolygonalWorld, Unreachable,
                               corner_fan, fan_contains, path_table,
                               shortest_paths)


def double_slit_world(target=(4.0, 0.0)):
    obstacles = [
        [[-0.02, 1.1], [0.02, 1.1], [0.02, 6.0], [-0.02, 6.0]],
        [[-0.02, -0.9], [0.02, -0.9], [0.02, 0.9], [-0.02, 0.9]],
        [[-0.02, -6.0], [0.02, -6.0], [0.02, -1.1], [-0.02, -1.1]],
    ]
    return PolygonalWorld(obstacles, [-4.0, 0.0], list(target))


def closed_form_slit_length(sy):
    # two straight legs wrapping the inner slit corners at height sy
    a = np.hypot(3.98, abs(sy))
    return 2.0 * a + 0.04


def test_symmetric_double_slit_two_equal_minima():
    w = double_slit_world()
    paths = shortest_paths(w, 2)
    assert len(paths) == 2
    assert paths[0].length == pytest.approx(closed_form_slit_length(0.9), abs=1e-12)
    assert abs(paths[0].length - paths[1].length) <= 1e-12 * paths[0].length
    # one taut path through each slit
    ys = sorted(p.corners[0][1] for p in paths)
    assert ys[0] == pytest.approx(-0.9) and ys[1] == pytest.approx(0.9)


def test_no_obstacles_straight_segment():
    w = PolygonalWorld([], [0.0, 0.0], [3.0, 4.0])
    paths = shortest_paths(w, 1)
    assert len(paths) == 1
    assert paths[0].length == pytest.approx(5.0, abs=1e-14)
    assert paths[0].corners == []


def test_displaced_target_strict_ordering_between_slits():
    w = double_slit_world(target=(4.0, 1.0))
    paths = shortest_paths(w, 2)
    upper = [p for p in paths if all(c[1] > 0 for c in p.corners)]
    lower = [p for p in paths if all(c[1] < 0 for c in p.corners)]
    assert upper and lower
    assert upper[0].length < lower[0].length


def test_lengths_bounded_below_by_straight_line():
    for tgt in [(4.0, 0.0), (4.0, 1.0)]:
        w = double_slit_world(target=tgt)
        straight = np.linalg.norm(np.array(tgt) - np.array([-4.0, 0.0]))
        for p in shortest_paths(w, 2):
            assert p.length >= straight - 1e-12


def test_removing_obstacle_never_lengthens():
    w_full = double_slit_world()
    obstacles = w_full.obstacles[:1] + w_full.obstacles[2:]  # drop middle bar
    w_less = PolygonalWorld(obstacles, [-4.0, 0.0], [4.0, 0.0])
    full = shortest_paths(w_full, 1)[0].length
    less = shortest_paths(w_less, 1)[0].length
    assert less <= full + 1e-12
    assert less == pytest.approx(8.0, abs=1e-12)  # straight through the open slit band


def test_path_segments_avoid_interiors():
    w = double_slit_world(target=(4.0, 1.0))
    for p in shortest_paths(w, 2):
        for a, b in zip(p.vertices[:-1], p.vertices[1:]):
            assert w.segment_free(a, b)


def test_unreachable_enclosed_target():
    # four overlapping slabs form a closed annulus around the target
    walls = [
        [[-1.0, -1.0], [5.0, -1.0], [5.0, 0.0], [-1.0, 0.0]],
        [[-1.0, 4.0], [5.0, 4.0], [5.0, 5.0], [-1.0, 5.0]],
        [[-1.0, -1.0], [0.0, -1.0], [0.0, 5.0], [-1.0, 5.0]],
        [[4.0, -1.0], [5.0, -1.0], [5.0, 5.0], [4.0, 5.0]],
    ]
    w = PolygonalWorld(walls, [-3.0, 2.0], [2.0, 2.0])
    with pytest.raises(Unreachable):
        shortest_paths(w, 1)


def test_corner_fan_reflex_notch_90_degrees():
    # L-shaped obstacle: vertex (1,1) has a 270-degree interior wedge,
    # leaving a 90-degree free sector
    L = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [1.0, 2.0], [1.0, 1.0], [0.0, 1.0]]
    w = PolygonalWorld([L], [0.5, 3.0], [3.0, 0.5])
    path = GeodesicPath.from_vertices([[0.5, 3.0], [1.0, 1.0], [3.0, 0.5]])
    fan = corner_fan(w, path, 3)
    angles = sorted(np.arctan2(d[1], d[0]) for d in fan)
    # free sector between the 12 o'clock edge (1,2)-(1,1) and the (0,1)-(1,1) edge
    assert angles[0] == pytest.approx(np.pi / 2.0, abs=1e-9)
    assert angles[1] == pytest.approx(3.0 * np.pi / 4.0, abs=1e-9)
    assert angles[2] == pytest.approx(np.pi, abs=1e-9)


def test_corner_fan_collinear_edge_180_degrees():
    rect = [[0.0, 0.0], [2.0, 0.0], [4.0, 0.0], [4.0, 1.0], [0.0, 1.0]]
    w = PolygonalWorld([rect], [-1.0, -1.0], [5.0, -1.0])
    path = GeodesicPath.from_vertices([[-1.0, -1.0], [2.0, 0.0], [5.0, -1.0]])
    fan = corner_fan(w, path, 5)
    angles = [np.arctan2(d[1], d[0]) for d in fan]
    rel = [(a - angles[0]) % (2.0 * np.pi) for a in angles]
    assert np.allclose(rel, [0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4, np.pi], atol=1e-9)


def test_corner_fan_slit_contains_straight_through():
    w = double_slit_world()
    best = shortest_paths(w, 1)[0]
    to_target = np.array([4.0, 0.0]) - best.corners[-1]
    assert fan_contains(w, best, to_target)


def test_path_table_symmetric_and_displaced():
    w = double_slit_world()
    rows = path_table(shortest_paths(w, 2), speed=1.0)
    assert rows[0]["action_difference_vs_shortest"] == 0.0
    assert rows[1]["action_difference_vs_shortest"] == 0.0
    assert rows[0]["travel_time"] == rows[0]["length"]

    w2 = double_slit_world(target=(4.0, 1.0))
    paths2 = shortest_paths(w2, 2)
    rows2 = path_table(paths2, speed=2.0)
    dlen = paths2[1].length - paths2[0].length
    assert rows2[1]["action_difference_vs_shortest"] == pytest.approx(0.5 * 2.0 * dlen)
    assert rows2[0]["travel_time"] == pytest.approx(paths2[0].length / 2.0)

    single = path_table(shortest_paths(PolygonalWorld([], [0, 0], [1, 1]), 1), 1.0)
    assert len(single) == 1 and single[0]["action_difference_vs_shortest"] == 0.0


def test_world_validation():
    with pytest.raises(ValueError):
        PolygonalWorld([[[0, 0], [1, 1]]], [0, 0], [1, 0])  # two vertices
    bowtie = [[0, 0], [1, 1], [1, 0], [0, 1]]
    with pytest.raises(ValueError):
        PolygonalWorld([bowtie], [-1, 0], [2, 0])
    box = [[0, 0], [1, 0], [1, 1], [0, 1]]
    with pytest.raises(ValueError):
        PolygonalWorld([box], [0.5, 0.5], [2, 0])  # source inside
