import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from app.errors import DataValidationError, EmptySceneError
from app.scene_graph.graph import (
    BoundingBox,
    adjacency_matrix,
    build_spatial_graph,
    expand_bbox,
    graph_distances,
    make_variant,
)
from app.scene_graph.instance_map import InstanceMap, load_instance_map, save_instance_map


def imap_of(pixels, classes=None):
    pixels = np.asarray(pixels, dtype=np.int64)
    ids = sorted(int(i) for i in np.unique(pixels) if i)
    return InstanceMap(pixel_instance=pixels, instance_class=classes or {i: 0 for i in ids})


def edge_ids(graph):
    return {tuple(sorted(graph.nodes[i].instance_id for i in e)) for e in graph.edges}


def brute_force_edges(pixels, connectivity=4):
    h, w = pixels.shape
    steps = [(0, 1), (1, 0), (0, -1), (-1, 0)]
    if connectivity == 8:
        steps += [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    pairs = set()
    for y in range(h):
        for x in range(w):
            for dy, dx in steps:
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w:
                    a, b = int(pixels[y, x]), int(pixels[yy, xx])
                    if a and b and a != b:
                        pairs.add(tuple(sorted((a, b))))
    return pairs


def random_rectangles(seed, size=16, count=5):
    rng = np.random.default_rng(seed)
    pixels = np.zeros((size, size), dtype=np.int64)
    for iid in range(1, count + 1):
        y0, x0 = rng.integers(0, size - 2, 2)
        h, w = rng.integers(2, 7, 2)
        pixels[y0:y0 + h, x0:x0 + w] = iid
    return pixels


# small labeled grids with at least one instance, fragments included
pixel_grids = arrays(
    np.int64, array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=9), elements=st.integers(0, 5),
).filter(lambda p: p.any())


@st.composite
def rectangle_maps(draw, size=16):
    """Overlapping rectangles, later ones painted on top."""
    pixels = np.zeros((size, size), dtype=np.int64)
    for iid in range(1, draw(st.integers(1, 6)) + 1):
        y0, x0 = draw(st.integers(0, size - 2)), draw(st.integers(0, size - 2))
        h, w = draw(st.integers(1, 7)), draw(st.integers(1, 7))
        pixels[y0:y0 + h, x0:x0 + w] = iid
    return pixels


instance_maps = st.one_of(pixel_grids, rectangle_maps())


def test_two_touching_instances():
    graph = build_spatial_graph(imap_of([[1, 1], [2, 2]]))
    assert [n.instance_id for n in graph.nodes] == [1, 2]
    assert edge_ids(graph) == {(1, 2)}


def test_unlabeled_pixels_never_bridge():
    graph = build_spatial_graph(imap_of([[1, 0, 2]]))
    assert graph.edges == set()


def test_diagonal_touch_needs_8_connectivity():
    pixels = [[1, 0], [0, 2]]
    assert build_spatial_graph(imap_of(pixels)).edges == set()
    assert edge_ids(build_spatial_graph(imap_of(pixels), connectivity=8)) == {(1, 2)}


@given(pixels=instance_maps, connectivity=st.sampled_from([4, 8]))
@settings(max_examples=60)
def test_edges_match_brute_force_scan(pixels, connectivity):
    graph = build_spatial_graph(imap_of(pixels), connectivity=connectivity)
    assert edge_ids(graph) == brute_force_edges(pixels, connectivity)


def test_multi_component_instance_is_one_node():
    pixels = [[1, 2, 1], [0, 0, 0], [1, 0, 3]]
    graph = build_spatial_graph(imap_of(pixels))
    assert [n.instance_id for n in graph.nodes] == [1, 2, 3]
    assert graph.nodes[0].pixel_count == 3
    assert edge_ids(graph) == {(1, 2)}


@given(pixels=instance_maps)
@settings(max_examples=30)
def test_tight_boxes_contain_every_pixel(pixels):
    graph = build_spatial_graph(imap_of(pixels))
    for node in graph.nodes:
        ys, xs = np.nonzero(pixels == node.instance_id)
        assert node.bbox == BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        assert node.pixel_count == xs.size


@given(pixels=instance_maps, data=st.data())
@settings(max_examples=30)
def test_relabeling_preserves_the_graph(pixels, data):
    ids = sorted(int(i) for i in np.unique(pixels) if i)
    fresh = data.draw(st.lists(st.integers(1, 999), min_size=len(ids), max_size=len(ids), unique=True))
    relabel = {0: 0, **dict(zip(ids, fresh))}
    relabeled = np.vectorize(relabel.get)(pixels)
    original = {tuple(sorted(relabel[i] for i in pair)) for pair in edge_ids(build_spatial_graph(imap_of(pixels)))}
    assert edge_ids(build_spatial_graph(imap_of(relabeled))) == original


def test_empty_map_is_rejected():
    with pytest.raises(EmptySceneError):
        build_spatial_graph(imap_of(np.zeros((3, 3))))


@given(pixels=instance_maps, connectivity=st.sampled_from([4, 8]))
@settings(max_examples=30)
def test_spatial_edges_are_symmetric_without_self_loops(pixels, connectivity):
    graph = build_spatial_graph(imap_of(pixels), connectivity=connectivity)
    adj = adjacency_matrix(graph)
    np.testing.assert_array_equal(adj, adj.T)
    assert np.all(np.diag(adj) == 0)


# ---- variants ------------------------------------------------------------------

def four_nodes():
    return build_spatial_graph(imap_of([[1, 2, 3, 4]]))


def test_unary_and_fully_connected_variants():
    graph = four_nodes()
    assert make_variant(graph, "unary").edges == set()
    fc = make_variant(graph, "fully_connected")
    assert len(fc.edges) == 6
    assert make_variant(fc, "spatial").edges == graph.edges


def test_chain_is_a_seeded_directed_path():
    graph = four_nodes()
    chain = make_variant(graph, "chain", rng_seed=9)
    assert sorted(chain.chain_order) == [0, 1, 2, 3]
    assert len(chain.directed_edges()) == 3
    assert make_variant(graph, "chain", rng_seed=9).chain_order == chain.chain_order
    first = chain.chain_order[0]
    assert chain.neighbors(first) == []
    for prev, nxt in zip(chain.chain_order, chain.chain_order[1:]):
        assert chain.neighbors(nxt) == [prev]


def test_unknown_topology():
    with pytest.raises(ValueError):
        make_variant(four_nodes(), "ring")


def test_graph_distances_along_a_path():
    assert graph_distances(four_nodes(), 0) == {0: 0, 1: 1, 2: 2, 3: 3}


# ---- context boxes -----------------------------------------------------------------

def test_expand_bbox():
    box = BoundingBox(40, 40, 59, 59)
    assert expand_bbox(box, 1.0, 100, 100) == box
    assert expand_bbox(box, 1.2, 100, 100) == BoundingBox(38, 38, 61, 61)
    assert expand_bbox(BoundingBox(0, 0, 9, 9), 1.2, 10, 10) == BoundingBox(0, 0, 9, 9)
    with pytest.raises(ValueError):
        expand_bbox(box, 0.5, 100, 100)


def test_nodes_carry_context_boxes():
    pixels = np.zeros((100, 100), dtype=np.int64)
    pixels[40:60, 40:60] = 1
    node = build_spatial_graph(imap_of(pixels)).nodes[0]
    assert node.context_box == BoundingBox(38, 38, 61, 61)


# ---- files ---------------------------------------------------------------------------

@pytest.mark.parametrize("suffix", [".pgm", ".json"])
def test_instance_map_file_round_trip(tmp_path, suffix):
    pixels = random_rectangles(5)
    pixels[0, 0] = 300
    imap = imap_of(pixels, None)
    imap.instance_class = {i: i % 3 for i in imap.instance_ids()}
    path = save_instance_map(tmp_path / f"m{suffix}", imap)
    loaded = load_instance_map(path, num_classes=3)
    np.testing.assert_array_equal(loaded.pixel_instance, imap.pixel_instance)
    assert loaded.instance_class == imap.instance_class


def test_loader_rejects_ids_missing_from_the_sidecar(tmp_path):
    imap = imap_of([[1, 2]])
    path = save_instance_map(tmp_path / "m.pgm", imap)
    (tmp_path / "m.classes.json").write_text(json.dumps({"1": 0}))
    with pytest.raises(DataValidationError):
        load_instance_map(path)
