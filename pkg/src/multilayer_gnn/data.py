"""Aligned multilayer dataset: gene catalog, layer graphs, features, labels.

Input formats (all UTF-8, LF or CRLF):
  edge list    whitespace-separated gene pairs, one per line, '#' comments
  features     CSV with header row ``gene,<name>,...``; an optional second
               row whose first cell is ``group`` tags each feature with an
               omic group
  labels       ``gene<TAB>0|1``
  gene sets    GMT (set name, description, members, tab-separated)

Self-loops are never stored on a layer graph; degree-based normalization
adds them later. Edge lists are undirected and deduplicated to a canonical
(min, max) sorted form.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

POSITIVE, NEGATIVE = 1, 0


class GeneCatalog:
    """Ordered set of unique gene names with stable integer ids.

    Mutable while inputs are being loaded (loaders append unseen genes);
    treated as frozen once a dataset is assembled.
    """

    def __init__(self, names=()):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        got = self.index.get(name)
        if got is not None:
            return got
        gid = len(self.names)
        self.names.append(name)
        self.index[name] = gid
        return gid

    def id_of(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise DataError(f"unknown gene name {name!r}") from None

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self.index


class LayerGraph:
    """One undirected gene-gene interaction network over catalog ids.

    ``node_ids`` is the sorted set of catalog ids present in this layer
    (isolated nodes are allowed); ``edges`` is the canonical deduplicated
    (min, max) pair list. A CSR adjacency over layer-local ids is built on
    construction.
    """

    def __init__(self, layer_name: str, node_ids, edges):
        self.layer_name = layer_name
        self.node_ids = np.unique(np.asarray(node_ids, dtype=np.intp))
        edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
        if edges.size:
            if (edges[:, 0] == edges[:, 1]).any():
                raise DataError(f"layer {layer_name!r}: self-loops are not storable")
            lo = edges.min(axis=1)
            hi = edges.max(axis=1)
            edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
            missing = np.setdiff1d(edges.ravel(), self.node_ids)
            if missing.size:
                raise DataError(
                    f"layer {layer_name!r}: edge endpoint {missing[0]} not in node set"
                )
        self.edges = edges

        # layer-local CSR over both edge directions
        n = self.node_ids.size
        if self.edges.size:
            u = np.searchsorted(self.node_ids, self.edges[:, 0])
            v = np.searchsorted(self.node_ids, self.edges[:, 1])
            dst = np.concatenate([u, v])
            src = np.concatenate([v, u])
            order = np.lexsort((src, dst))
            dst, src = dst[order], src[order]
        else:
            dst = src = np.empty(0, dtype=np.intp)
        self.csr_indptr = np.zeros(n + 1, dtype=np.intp)
        np.add.at(self.csr_indptr, dst + 1, 1)
        self.csr_indptr = np.cumsum(self.csr_indptr)
        self.csr_indices = src

    @property
    def n_nodes(self):
        return int(self.node_ids.size)

    @property
    def n_edges(self):
        return int(self.edges.shape[0])

    def contains(self, gene_id: int) -> bool:
        i = np.searchsorted(self.node_ids, gene_id)
        return i < self.node_ids.size and self.node_ids[i] == gene_id

    def local_id(self, gene_id: int) -> int:
        i = int(np.searchsorted(self.node_ids, gene_id))
        if i >= self.node_ids.size or self.node_ids[i] != gene_id:
            raise KeyError(f"gene {gene_id} not in layer {self.layer_name!r}")
        return i

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_indptr)

    def neighbors(self, gene_id: int) -> np.ndarray:
        """Catalog ids of the one-hop neighbors of ``gene_id`` in this layer."""
        i = self.local_id(gene_id)
        loc = self.csr_indices[self.csr_indptr[i]:self.csr_indptr[i + 1]]
        return self.node_ids[loc]


class FeatureMatrix:
    def __init__(self, values, feature_names, omic_group=None, missing=()):
        self.values = np.asarray(values, dtype=np.float64)
        self.feature_names = list(feature_names)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.feature_names):
            raise DataError("feature matrix shape does not match feature names")
        if not np.isfinite(self.values).all():
            raise DataError("feature matrix contains non-finite values")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("duplicate feature names")
        self.omic_group = list(omic_group) if omic_group is not None else ["default"] * len(self.feature_names)
        if len(self.omic_group) != len(self.feature_names):
            raise DataError("omic group row length does not match feature names")
        self.missing = tuple(missing)  # catalog genes absent from the file

    @property
    def n_features(self):
        return len(self.feature_names)


class LabelSet:
    """Partial gene id -> {0, 1} map; unlabeled genes are simply absent."""

    def __init__(self, labels: dict[int, int]):
        bad = [v for v in labels.values() if v not in (POSITIVE, NEGATIVE)]
        if bad:
            raise DataError(f"labels must be 0 or 1, got {bad[0]!r}")
        self.labels = dict(labels)

    def labeled_ids(self):
        return np.array(sorted(self.labels), dtype=np.intp)

    def positive_ids(self):
        return np.array(sorted(g for g, y in self.labels.items() if y == POSITIVE), dtype=np.intp)

    def negative_ids(self):
        return np.array(sorted(g for g, y in self.labels.items() if y == NEGATIVE), dtype=np.intp)

    def __len__(self):
        return len(self.labels)

    def get(self, gene_id, default=None):
        return self.labels.get(gene_id, default)


class MultilayerDataset:
    """K layer graphs over one catalog, plus one feature matrix and labels."""

    def __init__(self, catalog: GeneCatalog, layers, features: FeatureMatrix, labels: LabelSet):
        layers = tuple(layers)
        if not layers:
            raise DataError("a dataset needs at least one layer graph")
        names = [lg.layer_name for lg in layers]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate layer names: {names}")
        n = len(catalog)
        for lg in layers:
            if lg.node_ids.size and lg.node_ids.max() >= n:
                raise DataError(f"layer {lg.layer_name!r} references id outside catalog")
        if features.values.shape[0] != n:
            raise DataError(
                f"feature rows ({features.values.shape[0]}) != catalog size ({n})"
            )
        for g in labels.labels:
            if not 0 <= g < n:
                raise DataError(f"label references id {g} outside catalog")
        self.catalog = catalog
        self.layers = layers
        self.features = features
        self.labels = labels

    @property
    def n_genes(self):
        return len(self.catalog)

    @property
    def n_layers(self):
        return len(self.layers)

    def layer_by_name(self, name: str) -> LayerGraph:
        for lg in self.layers:
            if lg.layer_name == name:
                return lg
        raise DataError(f"no layer named {name!r}")

    def subset_layers(self, names) -> "MultilayerDataset":
        """Same catalog/features/labels restricted to the named layers."""
        keep = [self.layer_by_name(n) for n in names]
        return MultilayerDataset(self.catalog, keep, self.features, self.labels)


class GeneSetCollection:
    def __init__(self, sets: dict[str, list[str]], description: dict[str, str]):
        for name, members in sets.items():
            if not members:
                raise DataError(f"gene set {name!r} is empty")
        self.sets = dict(sets)
        self.description = dict(description)

    def __len__(self):
        return len(self.sets)


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def _data_lines(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def load_layer_graph(path, catalog: GeneCatalog, layer_name: str) -> LayerGraph:
    """Parse an edge list; unseen gene names are appended to the catalog.

    Undirected duplicates (including reversed pairs) collapse to one edge;
    self-loop lines register the node but store no edge.
    """
    nodes = set()
    edges = []
    saw_data = False
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            fields = line.split()
        if len(fields) != 2:
            raise DataError(
                f"expected 2 columns, got {len(fields)}", path=path, line=lineno
            )
        saw_data = True
        a = catalog.add(fields[0])
        b = catalog.add(fields[1])
        nodes.add(a)
        nodes.add(b)
        if a != b:
            edges.append((min(a, b), max(a, b)))
    if not saw_data:
        raise DataError("edge file contains no edges", path=path)
    return LayerGraph(layer_name, sorted(nodes), np.array(edges, dtype=np.intp).reshape(-1, 2))


def load_feature_matrix(path, catalog: GeneCatalog) -> FeatureMatrix:
    """Parse a feature CSV and reorder rows to catalog order.

    Catalog genes missing from the file receive all-zero rows (counted on
    ``FeatureMatrix.missing``); genes in the file but not in the catalog are
    an error.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError("feature file is empty", path=path)
    header = rows[0]
    if len(header) < 2:
        raise DataError("feature header needs a gene column and at least one feature", path=path)
    feature_names = [c.strip() for c in header[1:]]
    body_start = 1
    omic_group = None
    if len(rows) > 1 and rows[1] and rows[1][0].strip().lower() == "group":
        group_row = [c.strip() for c in rows[1][1:]]
        if len(group_row) != len(feature_names):
            raise DataError("group row length does not match feature count", path=path, line=2)
        omic_group = group_row
        body_start = 2

    n, d = len(catalog), len(feature_names)
    values = np.zeros((n, d))
    seen = set()
    for lineno, row in enumerate(rows[body_start:], start=body_start + 1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != d + 1:
            raise DataError(
                f"expected {d + 1} fields, got {len(row)}", path=path, line=lineno
            )
        gene = row[0].strip()
        if gene not in catalog:
            raise DataError(f"gene {gene!r} not in catalog", path=path, line=lineno)
        gid = catalog.index[gene]
        if gid in seen:
            raise DataError(f"duplicate feature row for gene {gene!r}", path=path, line=lineno)
        seen.add(gid)
        for col, cell in enumerate(row[1:], start=1):
            try:
                val = float(cell)
            except ValueError:
                raise DataError(
                    f"non-numeric cell {cell!r} (column {col + 1})", path=path, line=lineno
                ) from None
            if not math.isfinite(val):
                raise DataError(
                    f"non-finite cell {cell!r} (column {col + 1})", path=path, line=lineno
                )
            values[gid, col - 1] = val

    missing = tuple(catalog.names[g] for g in range(n) if g not in seen)
    if missing:
        logger.warning(
            "%d catalog gene(s) missing from %s; zero rows substituted", len(missing), path
        )
    return FeatureMatrix(values, feature_names, omic_group, missing=missing)


def load_labels(path, catalog: GeneCatalog) -> LabelSet:
    labels: dict[int, int] = {}
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) != 2:
            fields = line.split()
        if len(fields) != 2:
            raise DataError(f"expected 2 columns, got {len(fields)}", path=path, line=lineno)
        gene, tag = fields
        if gene not in catalog:
            raise DataError(f"label for unknown gene {gene!r}", path=path, line=lineno)
        if tag not in ("0", "1"):
            raise DataError(f"label must be 0 or 1, got {tag!r}", path=path, line=lineno)
        gid = catalog.index[gene]
        val = int(tag)
        if gid in labels and labels[gid] != val:
            raise DataError(f"conflicting labels for gene {gene!r}", path=path, line=lineno)
        labels[gid] = val
    return LabelSet(labels)


def load_gene_sets(path) -> GeneSetCollection:
    sets: dict[str, list[str]] = {}
    description: dict[str, str] = {}
    for lineno, line in _data_lines(path):
        fields = line.split("\t")
        if len(fields) < 3:
            raise DataError(
                f"GMT line needs set name, description and >=1 member, got {len(fields)} fields",
                path=path,
                line=lineno,
            )
        name, desc, *members = fields
        members = [m for m in members if m.strip()]
        if not members:
            raise DataError(f"gene set {name!r} has no members", path=path, line=lineno)
        if name in sets:
            raise DataError(f"duplicate gene set {name!r}", path=path, line=lineno)
        sets[name] = members
        description[name] = desc
    return GeneSetCollection(sets, description)


def load_dataset(layer_specs, features_path, labels_path) -> MultilayerDataset:
    """Load ``[(name, path), ...]`` edge lists, then features, then labels."""
    catalog = GeneCatalog()
    layers = [load_layer_graph(path, catalog, name) for name, path in layer_specs]
    features = load_feature_matrix(features_path, catalog)
    labels = load_labels(labels_path, catalog)
    return MultilayerDataset(catalog, layers, features, labels)


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------

def layer_subseed(seed: int, layer_name: str) -> int:
    """Stable per-layer seed, independent of layer order in the dataset."""
    digest = hashlib.sha256(f"{seed}\x1f{layer_name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def perturb_features(dataset: MultilayerDataset, mode: str, seed: int) -> MultilayerDataset:
    """Replace the feature matrix: 'random' -> seeded standard normals,
    'all_one' -> constant ones. Labels, edges and catalog are untouched."""
    shape = dataset.features.values.shape
    if mode == "random":
        values = np.random.default_rng(seed).standard_normal(shape)
    elif mode == "all_one":
        values = np.ones(shape)
    else:
        raise ValueError(f"unknown perturbation mode {mode!r}")
    features = FeatureMatrix(
        values, dataset.features.feature_names, dataset.features.omic_group
    )
    return MultilayerDataset(dataset.catalog, dataset.layers, features, dataset.labels)


def remove_edges(dataset: MultilayerDataset, fraction: float, seed: int) -> MultilayerDataset:
    """Remove floor(fraction * |E|) edges per layer, sampled without
    replacement from a per-layer subseeded generator. Node sets persist."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    new_layers = []
    for lg in dataset.layers:
        k = int(math.floor(fraction * lg.n_edges + 1e-9))
        if k == 0:
            new_layers.append(lg)
            continue
        rng = np.random.default_rng(layer_subseed(seed, lg.layer_name))
        drop = rng.choice(lg.n_edges, size=k, replace=False)
        keep = np.setdiff1d(np.arange(lg.n_edges), drop)
        new_layers.append(LayerGraph(lg.layer_name, lg.node_ids, lg.edges[keep]))
    return MultilayerDataset(dataset.catalog, new_layers, dataset.features, dataset.labels)


# ---------------------------------------------------------------------------
# writers (round-trip of the canonical forms)
# ---------------------------------------------------------------------------

def write_edge_list(layer: LayerGraph, catalog: GeneCatalog, path):
    with open(path, "w", encoding="utf-8") as fh:
        covered = set(layer.edges.ravel().tolist())
        for u, v in layer.edges:
            fh.write(f"{catalog.names[u]}\t{catalog.names[v]}\n")
        for g in layer.node_ids:
            if int(g) not in covered:  # isolated node: self-loop line keeps it present
                fh.write(f"{catalog.names[g]}\t{catalog.names[g]}\n")


def write_features_csv(features: FeatureMatrix, catalog: GeneCatalog, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gene"] + features.feature_names)
        writer.writerow(["group"] + features.omic_group)
        for gid, name in enumerate(catalog.names):
            writer.writerow([name] + [repr(float(v)) for v in features.values[gid]])


def write_labels_tsv(labels: LabelSet, catalog: GeneCatalog, path):
    with open(path, "w", encoding="utf-8") as fh:
        for gid in sorted(labels.labels):
            fh.write(f"{catalog.names[gid]}\t{labels.labels[gid]}\n")


def write_gene_sets_gmt(collection: GeneSetCollection, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name, members in collection.sets.items():
            desc = collection.description.get(name, "")
            fh.write("\t".join([name, desc] + list(members)) + "\n")
