"""Loader, perturbation, and invariant tests for the data model."""

import numpy as np
import pytest

from multilayer_gnn import data as dm
from multilayer_gnn.errors import DataError


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def toy_dataset(seed=0, n=6, d=3, edges_per_layer=None):
    """Small in-memory dataset for perturbation tests."""
    catalog = dm.GeneCatalog([f"G{i}" for i in range(n)])
    if edges_per_layer is None:
        edges_per_layer = [[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], [(0, 2), (1, 3)]]
    layers = [
        dm.LayerGraph(f"L{k}", list(range(n)), np.array(es))
        for k, es in enumerate(edges_per_layer)
    ]
    rng = np.random.default_rng(seed)
    features = dm.FeatureMatrix(rng.standard_normal((n, d)), [f"f{j}" for j in range(d)])
    labels = dm.LabelSet({0: 1, 1: 0, 2: 1, 3: 0})
    return dm.MultilayerDataset(catalog, layers, features, labels)


class TestLoadLayerGraph:
    def test_undirected_dedup(self, tmp_path):
        path = write(tmp_path, "e.tsv", "A\tB\nB\tA\nA\tB\n")
        catalog = dm.GeneCatalog()
        lg = dm.load_layer_graph(path, catalog, "L")
        assert lg.n_edges == 1
        assert lg.n_nodes == 2

    def test_self_loop_stripped_node_kept(self, tmp_path):
        path = write(tmp_path, "e.tsv", "A\tA\n")
        lg = dm.load_layer_graph(path, dm.GeneCatalog(), "L")
        assert lg.n_edges == 0
        assert lg.n_nodes == 1

    def test_triangle(self, tmp_path):
        path = write(tmp_path, "e.tsv", "A B\nB C\nA C\n")
        lg = dm.load_layer_graph(path, dm.GeneCatalog(), "L")
        assert lg.n_nodes == 3
        assert lg.n_edges == 3

    def test_comments_and_crlf(self, tmp_path):
        path = write(tmp_path, "e.tsv", "# header\r\nA\tB\r\n")
        lg = dm.load_layer_graph(path, dm.GeneCatalog(), "L")
        assert lg.n_edges == 1

    def test_malformed_line_number(self, tmp_path):
        path = write(tmp_path, "e.tsv", "A\tB\nA\tB\tC\n")
        with pytest.raises(DataError, match=":2"):
            dm.load_layer_graph(path, dm.GeneCatalog(), "L")

    def test_empty_file(self, tmp_path):
        path = write(tmp_path, "e.tsv", "# nothing\n")
        with pytest.raises(DataError, match="no edges"):
            dm.load_layer_graph(path, dm.GeneCatalog(), "L")

    def test_catalog_grows_across_layers(self, tmp_path):
        catalog = dm.GeneCatalog()
        dm.load_layer_graph(write(tmp_path, "a.tsv", "A\tB\n"), catalog, "L0")
        dm.load_layer_graph(write(tmp_path, "b.tsv", "B\tC\n"), catalog, "L1")
        assert catalog.names == ["A", "B", "C"]


class TestLoadFeatures:
    def test_catalog_order(self, tmp_path):
        catalog = dm.GeneCatalog(["B", "A"])
        path = write(tmp_path, "f.csv", "gene,f1,f2,f3\nA,1,2,3\nB,4,5,6\n")
        fm = dm.load_feature_matrix(path, catalog)
        np.testing.assert_array_equal(fm.values, [[4, 5, 6], [1, 2, 3]])

    def test_missing_gene_zero_row(self, tmp_path):
        catalog = dm.GeneCatalog(["A", "B", "C"])
        path = write(tmp_path, "f.csv", "gene,f1\nA,1\nB,2\n")
        fm = dm.load_feature_matrix(path, catalog)
        np.testing.assert_array_equal(fm.values[:, 0], [1, 2, 0])
        assert fm.missing == ("C",)

    def test_nan_cell_rejected(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        path = write(tmp_path, "f.csv", "gene,f1\nA,NaN\n")
        with pytest.raises(DataError, match="NaN"):
            dm.load_feature_matrix(path, catalog)

    def test_non_numeric_cell(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        path = write(tmp_path, "f.csv", "gene,f1,f2\nA,1,oops\n")
        with pytest.raises(DataError, match="oops"):
            dm.load_feature_matrix(path, catalog)

    def test_duplicate_row(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        path = write(tmp_path, "f.csv", "gene,f1\nA,1\nA,2\n")
        with pytest.raises(DataError, match="duplicate"):
            dm.load_feature_matrix(path, catalog)

    def test_group_row(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        path = write(tmp_path, "f.csv", "gene,f1,f2\ngroup,MF,GE\nA,1,2\n")
        fm = dm.load_feature_matrix(path, catalog)
        assert fm.omic_group == ["MF", "GE"]

    def test_unknown_gene_rejected(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        path = write(tmp_path, "f.csv", "gene,f1\nZ,1\n")
        with pytest.raises(DataError, match="not in catalog"):
            dm.load_feature_matrix(path, catalog)


class TestLoadLabels:
    def test_basic(self, tmp_path):
        catalog = dm.GeneCatalog(["A", "B"])
        ls = dm.load_labels(write(tmp_path, "l.tsv", "A\t1\nB\t0\n"), catalog)
        assert ls.get(0) == 1 and ls.get(1) == 0

    def test_conflict(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        with pytest.raises(DataError, match="conflict"):
            dm.load_labels(write(tmp_path, "l.tsv", "A\t1\nA\t0\n"), catalog)

    def test_unknown_gene(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        with pytest.raises(DataError, match="unknown gene"):
            dm.load_labels(write(tmp_path, "l.tsv", "Z\t1\n"), catalog)

    def test_bad_label_value(self, tmp_path):
        catalog = dm.GeneCatalog(["A"])
        with pytest.raises(DataError, match="0 or 1"):
            dm.load_labels(write(tmp_path, "l.tsv", "A\t2\n"), catalog)


class TestLoadGeneSets:
    def test_single_set(self, tmp_path):
        gs = dm.load_gene_sets(write(tmp_path, "s.gmt", "S1\tdesc\tA\tB\n"))
        assert gs.sets["S1"] == ["A", "B"]

    def test_order_preserved(self, tmp_path):
        gs = dm.load_gene_sets(write(tmp_path, "s.gmt", "S1\td\tA\nS2\td\tB\n"))
        assert list(gs.sets) == ["S1", "S2"]

    def test_short_line(self, tmp_path):
        with pytest.raises(DataError):
            dm.load_gene_sets(write(tmp_path, "s.gmt", "S1\tdesc\n"))


class TestPerturbations:
    def test_all_one(self):
        ds = toy_dataset()
        out = dm.perturb_features(ds, "all_one", seed=1)
        assert (out.features.values == 1.0).all()
        assert out.features.values.shape == ds.features.values.shape

    def test_random_seed_determinism(self):
        ds = toy_dataset()
        a = dm.perturb_features(ds, "random", seed=5)
        b = dm.perturb_features(ds, "random", seed=5)
        c = dm.perturb_features(ds, "random", seed=6)
        np.testing.assert_array_equal(a.features.values, b.features.values)
        assert (a.features.values != c.features.values).any()

    def test_perturb_leaves_rest_alone(self):
        ds = toy_dataset()
        out = dm.perturb_features(ds, "random", seed=2)
        assert out.labels is ds.labels
        assert out.layers is ds.layers
        assert out.catalog is ds.catalog

    def test_remove_edges_floor(self):
        ds = toy_dataset(edges_per_layer=[[(i, i + 1) for i in range(5)] + [(0, 2), (0, 3), (0, 4), (0, 5), (1, 3)]])
        assert ds.layers[0].n_edges == 10
        out = dm.remove_edges(ds, 0.2, seed=3)
        assert out.layers[0].n_edges == 8

    def test_remove_edges_identity_and_total(self):
        ds = toy_dataset()
        same = dm.remove_edges(ds, 0.0, seed=3)
        np.testing.assert_array_equal(same.layers[0].edges, ds.layers[0].edges)
        gone = dm.remove_edges(ds, 1.0, seed=3)
        for before, after in zip(ds.layers, gone.layers):
            assert after.n_edges == 0
            np.testing.assert_array_equal(after.node_ids, before.node_ids)

    def test_remove_edges_layer_order_independent(self):
        ds = toy_dataset()
        flipped = dm.MultilayerDataset(
            ds.catalog, (ds.layers[1], ds.layers[0]), ds.features, ds.labels
        )
        out1 = dm.remove_edges(ds, 0.5, seed=9)
        out2 = dm.remove_edges(flipped, 0.5, seed=9)
        np.testing.assert_array_equal(
            out1.layer_by_name("L0").edges, out2.layer_by_name("L0").edges
        )
        np.testing.assert_array_equal(
            out1.layer_by_name("L1").edges, out2.layer_by_name("L1").edges
        )

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            dm.remove_edges(toy_dataset(), 1.5, seed=0)


class TestInvariants:
    def test_round_trip_edges(self, tmp_path):
        text = "B\tA\nA\tB\nC\tB\nD\tD\n"
        catalog = dm.GeneCatalog()
        lg = dm.load_layer_graph(write(tmp_path, "e.tsv", text), catalog, "L")
        out = tmp_path / "out.tsv"
        dm.write_edge_list(lg, catalog, out)
        catalog2 = dm.GeneCatalog()
        lg2 = dm.load_layer_graph(out, catalog2, "L")
        pairs1 = {(catalog.names[u], catalog.names[v]) for u, v in lg.edges}
        pairs2 = {(catalog2.names[u], catalog2.names[v]) for u, v in lg2.edges}
        assert pairs1 == pairs2
        assert {catalog.names[g] for g in lg.node_ids} == {
            catalog2.names[g] for g in lg2.node_ids
        }

    def test_features_roundtrip(self, tmp_path):
        ds = toy_dataset()
        path = tmp_path / "f.csv"
        dm.write_features_csv(ds.features, ds.catalog, path)
        fm = dm.load_feature_matrix(path, ds.catalog)
        np.testing.assert_array_equal(fm.values, ds.features.values)

    def test_catalog_alignment_enforced(self):
        catalog = dm.GeneCatalog(["A"])
        layer = dm.LayerGraph("L", [0, 1], np.array([(0, 1)]))
        features = dm.FeatureMatrix(np.zeros((1, 1)), ["f0"])
        with pytest.raises(DataError):
            dm.MultilayerDataset(catalog, [layer], features, dm.LabelSet({}))

    def test_neighbors_and_degrees(self):
        ds = toy_dataset()
        lg = ds.layers[0]  # path 0-1-2-3-4-5
        np.testing.assert_array_equal(lg.neighbors(1), [0, 2])
        np.testing.assert_array_equal(lg.degrees(), [1, 2, 2, 2, 2, 1])
