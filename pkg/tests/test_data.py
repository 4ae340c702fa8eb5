import numpy as np
import pytest

from cellseg.data import (
    GenePanel,
    MoleculeTable,
    annulus_query,
    build_spatial_index,
    knn_bulk,
    knn_query,
    load_molecules,
)
from cellseg.errors import (
    EmptyFile,
    EmptyTable,
    InvalidRange,
    KTooLarge,
    MissingColumn,
    UnparsableRow,
)

from conftest import brute_force_annulus, brute_force_knn


def write(tmp_path, text, name="mol.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadMolecules:
    def test_basic_csv(self, tmp_path):
        path = write(tmp_path, "x,y,gene\n0.0,0.0,A\n1.0,0.0,B\n")
        table = load_molecules(path)
        assert len(table) == 2
        assert table.panel.names == ("A", "B")
        assert table.dims == 2
        np.testing.assert_allclose(table.positions, [[0, 0], [1, 0]])

    def test_unparsable_row_reports_number(self, tmp_path):
        path = write(tmp_path, "x,y,gene\n0,0,A\n1,0,B\nbad,0,A\n")
        with pytest.raises(UnparsableRow) as err:
            load_molecules(path)
        assert err.value.row == 3

    def test_non_finite_coordinate_rejected(self, tmp_path):
        path = write(tmp_path, "x,y,gene\n0,0,A\ninf,0,B\n")
        with pytest.raises(UnparsableRow) as err:
            load_molecules(path)
        assert err.value.row == 2

    def test_single_gene_panel(self, tmp_path):
        path = write(tmp_path, "x,y,gene\n0,0,A\n1,1,A\n2,2,A\n")
        table = load_molecules(path)
        assert table.panel.names == ("A",)
        assert table.panel.size == 1

    def test_missing_column(self, tmp_path):
        path = write(tmp_path, "x,y\n0,0\n")
        with pytest.raises(MissingColumn):
            load_molecules(path)

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyFile):
            load_molecules(write(tmp_path, ""))
        with pytest.raises(EmptyFile):
            load_molecules(write(tmp_path, "x,y,gene\n"))

    def test_tab_and_semicolon_delimiters(self, tmp_path):
        t = load_molecules(write(tmp_path, "x\ty\tgene\n0\t0\tA\n"))
        assert len(t) == 1
        s = load_molecules(write(tmp_path, "x;y;gene\n0;0;A\n", name="m2.csv"))
        assert len(s) == 1

    def test_column_map_and_z(self, tmp_path):
        path = write(tmp_path, "px,py,pz,target\n0,0,1,A\n1,1,2,B\n")
        table = load_molecules(path, column_map={"x": "px", "y": "py", "z": "pz", "gene": "target"})
        assert table.dims == 3
        np.testing.assert_allclose(table.positions[:, 2], [1, 2])

    def test_explicit_z_missing_errors(self, tmp_path):
        path = write(tmp_path, "x,y,gene\n0,0,A\n")
        with pytest.raises(MissingColumn):
            load_molecules(path, column_map={"z": "depth"})

    def test_panel_order_is_first_appearance(self, tmp_path):
        path = write(tmp_path, "x,y,gene\n0,0,C\n1,0,A\n2,0,C\n3,0,B\n")
        table = load_molecules(path)
        assert table.panel.names == ("C", "A", "B")


class TestSpatialIndex:
    def test_empty_table_rejected(self):
        panel = GenePanel(("A",))
        table = MoleculeTable(np.empty((0, 2)), np.empty(0, dtype=np.int64), panel)
        with pytest.raises(EmptyTable):
            build_spatial_index(table)

    def test_single_molecule(self):
        panel = GenePanel(("A",))
        table = MoleculeTable(np.array([[1.0, 2.0]]), np.array([0]), panel)
        index = build_spatial_index(table)
        assert knn_query(index, [5.0, 5.0], 1)[0][0] == 0

    def test_duplicate_positions_come_first(self):
        panel = GenePanel(("A",))
        pos = np.array([[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]])
        table = MoleculeTable(pos, np.zeros(3, dtype=np.int64), panel)
        index = build_spatial_index(table)
        result = knn_query(index, [0.0, 0.0], 3)
        assert [r[0] for r in result] == [0, 1, 2]


class TestKnnQuery:
    def test_collinear(self):
        panel = GenePanel(("A",))
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        table = MoleculeTable(pos, np.zeros(3, dtype=np.int64), panel)
        index = build_spatial_index(table)
        assert knn_query(index, [0.0, 0.0], 2) == [(0, 0.0), (1, 1.0)]

    def test_tie_breaks_by_lower_id(self):
        panel = GenePanel(("A",))
        pos = np.zeros((8, 2))
        pos[:, 0] = [10, 20, 30, 40, 1, 50, 60, -1]  # ids 4 and 7 equidistant from 0
        table = MoleculeTable(pos, np.zeros(8, dtype=np.int64), panel)
        index = build_spatial_index(table)
        result = knn_query(index, [0.0, 0.0], 2)
        assert [r[0] for r in result] == [4, 7]

    def test_k_too_large(self, random_index):
        with pytest.raises(KTooLarge):
            knn_query(random_index, [0.0, 0.0], 501)
        with pytest.raises(KTooLarge):
            knn_query(random_index, [0.0, 0.0], 0)

    def test_matches_brute_force(self, random_table, random_index):
        rng = np.random.default_rng(9)
        for _ in range(50):
            q = rng.uniform(-10, 110, size=2)
            k = int(rng.integers(1, 20))
            got = knn_query(random_index, q, k)
            want = brute_force_knn(random_table.positions, q, k)
            assert [g[0] for g in got] == [w[0] for w in want]
            np.testing.assert_allclose([g[1] for g in got], [w[1] for w in want])

    def test_distances_nondecreasing(self, random_table, random_index):
        for i in range(0, 200, 7):
            result = knn_query(random_index, random_table.positions[i], 10)
            d = [r[1] for r in result]
            assert all(a <= b for a, b in zip(d, d[1:]))

    def test_exclude_id(self, random_table, random_index):
        got = knn_query(random_index, random_table.positions[3], 5, exclude_id=3)
        assert all(g[0] != 3 for g in got)
        want = brute_force_knn(random_table.positions, random_table.positions[3], 5, exclude_id=3)
        assert [g[0] for g in got] == [w[0] for w in want]


class TestKnnBulk:
    def test_matches_per_point_queries(self, random_table, random_index):
        ids, dist = knn_bulk(random_index, 10)
        for i in range(0, 500, 23):
            want = brute_force_knn(random_table.positions, random_table.positions[i], 10)
            assert ids[i].tolist() == [w[0] for w in want]

    def test_exclude_self(self, random_table, random_index):
        ids, _ = knn_bulk(random_index, 10, exclude_self=True)
        own = np.arange(500)[:, None]
        assert not np.any(ids == own)

    def test_grid_ties_are_canonical(self):
        # integer grid: every neighbor distance ties with several others
        xs, ys = np.meshgrid(np.arange(5.0), np.arange(5.0))
        pos = np.stack([xs.ravel(), ys.ravel()], axis=1)
        panel = GenePanel(("A",))
        table = MoleculeTable(pos, np.zeros(25, dtype=np.int64), panel)
        index = build_spatial_index(table)
        ids, dist = knn_bulk(index, 5)
        for i in range(25):
            want = brute_force_knn(pos, pos[i], 5)
            assert ids[i].tolist() == [w[0] for w in want], f"row {i}"


class TestAnnulusQuery:
    def test_collinear_example(self):
        panel = GenePanel(("A",))
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [5.0, 0.0]])
        table = MoleculeTable(pos, np.zeros(4, dtype=np.int64), panel)
        index = build_spatial_index(table)
        assert annulus_query(index, [0.0, 0.0], 2, 6) == [2, 3]

    def test_empty_around_isolated_point(self):
        panel = GenePanel(("A",))
        table = MoleculeTable(np.array([[0.0, 0.0]]), np.array([0]), panel)
        index = build_spatial_index(table)
        assert annulus_query(index, [0.0, 0.0], 0, 0.5) == []

    def test_invalid_range(self, random_index):
        with pytest.raises(InvalidRange):
            annulus_query(random_index, [0, 0], 5, 5)
        with pytest.raises(InvalidRange):
            annulus_query(random_index, [0, 0], -1, 5)

    def test_matches_brute_force(self, random_table, random_index):
        rng = np.random.default_rng(17)
        for _ in range(30):
            q = rng.uniform(0, 100, size=2)
            r0 = float(rng.uniform(0, 30))
            r1 = r0 + float(rng.uniform(1, 40))
            got = annulus_query(random_index, q, r0, r1)
            want = brute_force_annulus(random_table.positions, q, r0, r1)
            assert sorted(got) == sorted(want)

    def test_bounds_open_low_closed_high(self):
        panel = GenePanel(("A",))
        pos = np.array([[0.0, 0.0], [2.0, 0.0], [6.0, 0.0]])
        table = MoleculeTable(pos, np.zeros(3, dtype=np.int64), panel)
        index = build_spatial_index(table)
        # distance exactly 2 excluded, exactly 6 included
        assert annulus_query(index, [0.0, 0.0], 2, 6) == [2]

    def test_union_property(self, random_table, random_index):
        q = random_table.positions[0]
        a, b, c = 5.0, 20.0, 50.0
        left = set(annulus_query(random_index, q, a, b))
        right = set(annulus_query(random_index, q, b, c))
        assert left | right == set(annulus_query(random_index, q, a, c))
        assert not left & right
