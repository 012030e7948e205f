"""Чтение регионов, соседства, слияния и панели счётов."""

from datetime import date
from pathlib import Path

import numpy as np
import pytest

from src.data.loader import load_counts, load_regions, merge_panel, read_merge
from src.exceptions import DataError
from src.services.data_exporter import DataExporter
from tests.helpers import make_panel, path_regions

TOY = Path(__file__).resolve().parent.parent / "data" / "toy"

REGIONS = """id,name,population,area_km2,centroid_x,centroid_y
A,Alpha,100000,50,0,0
B,Beta,200000,80,10,0
C,Gamma,300000,120,20,0
"""
ADJACENCY = """id_a,id_b
A,B
B,C
"""


def write(tmp_path: Path, name: str, text: str) -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def counts_file(tmp_path: Path, rows, name: str = "counts.csv") -> Path:
    body = "".join(f"{d},{rid},{v}\n" for d, rid, v in rows)
    return write(tmp_path, name, "date,region_id,value\n" + body)


class TestLoadRegions:

    def test_reads_table_and_symmetric_adjacency(self, tmp_path):
        regions = load_regions(write(tmp_path, "r.csv", REGIONS), write(tmp_path, "a.csv", ADJACENCY))
        assert regions.ids == ["A", "B", "C"]
        assert regions.regions[1].name == "Beta"
        assert sorted(regions.regions[1].neighbors) == ["A", "C"]
        assert regions.regions[2].neighbors == ["B"]
        np.testing.assert_allclose(regions.populations, [1e5, 2e5, 3e5])

    def test_duplicate_id(self, tmp_path):
        text = REGIONS + "A,Again,1000,10,1,1\n"
        with pytest.raises(DataError, match=r"r\.csv:5: duplicate region id 'A'"):
            load_regions(write(tmp_path, "r.csv", text), write(tmp_path, "a.csv", ADJACENCY))

    def test_unknown_neighbor(self, tmp_path):
        with pytest.raises(DataError, match=r"a\.csv:4: unknown region id 'Z'"):
            load_regions(write(tmp_path, "r.csv", REGIONS), write(tmp_path, "a.csv", ADJACENCY + "C,Z\n"))

    def test_self_loop(self, tmp_path):
        with pytest.raises(DataError, match="cannot neighbor itself"):
            load_regions(write(tmp_path, "r.csv", REGIONS), write(tmp_path, "a.csv", ADJACENCY + "B,B\n"))

    def test_bad_number(self, tmp_path):
        text = REGIONS.replace("200000", "many")
        with pytest.raises(DataError, match=r"r\.csv:3: population is not a number"):
            load_regions(write(tmp_path, "r.csv", text), write(tmp_path, "a.csv", ADJACENCY))

    def test_wrong_header(self, tmp_path):
        with pytest.raises(DataError, match=r"r\.csv:1: expected header"):
            load_regions(write(tmp_path, "r.csv", "a,b\n1,2\n"), write(tmp_path, "a.csv", ADJACENCY))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="file not found"):
            load_regions(tmp_path / "nope.csv", tmp_path / "nope_adj.csv")

    def test_merge(self, tmp_path):
        merge = write(tmp_path, "m.csv", "source_id,target_id,target_name\nB,BC,Beta-Gamma\nC,BC,Beta-Gamma\n")
        regions = load_regions(write(tmp_path, "r.csv", REGIONS), write(tmp_path, "a.csv", ADJACENCY), merge)
        assert regions.ids == ["A", "BC"]
        merged = regions.regions[1]
        assert merged.name == "Beta-Gamma"
        assert merged.population == 5e5
        assert merged.area == 200.0
        assert merged.centroid_x == pytest.approx((80 * 10 + 120 * 20) / 200)
        assert merged.neighbors == ["A"]
        assert regions.regions[0].neighbors == ["BC"]

    def test_region_merged_twice(self, tmp_path):
        merge = write(tmp_path, "m.csv", "source_id,target_id,target_name\nB,X,x\nB,Y,y\n")
        with pytest.raises(DataError, match=r"m\.csv:3: region B is merged twice"):
            read_merge(merge)


class TestLoadCounts:

    def test_cumulative_differences(self, tmp_path):
        days = ["2020-03-01", "2020-03-02", "2020-03-03", "2020-03-04"]
        path = counts_file(tmp_path, [(d, "A", v) for d, v in zip(days, (0, 3, 3, 10))])
        panel = load_counts(path)
        np.testing.assert_array_equal(panel.counts, [[3, 0, 7]])
        assert panel.dates[0] == date(2020, 3, 2)
        assert panel.corrections == 0

    def test_negative_difference_is_clamped(self, tmp_path):
        path = counts_file(tmp_path, [("2020-03-01", "A", 5), ("2020-03-02", "A", 4)])
        panel = load_counts(path)
        np.testing.assert_array_equal(panel.counts, [[0]])
        assert panel.corrections == 1

    def test_daily_mode_keeps_values(self, tmp_path):
        rows = [("2020-03-01", "A", 2), ("2020-03-01", "B", 0), ("2020-03-02", "A", 1), ("2020-03-02", "B", 4)]
        panel = load_counts(counts_file(tmp_path, rows), mode="daily")
        assert panel.region_ids == ["A", "B"]
        np.testing.assert_array_equal(panel.counts, [[2, 1], [0, 4]])

    def test_region_order_follows_table(self, tmp_path):
        rows = [("2020-03-01", "A", 2), ("2020-03-01", "B", 0)]
        panel = load_counts(counts_file(tmp_path, rows), mode="daily", region_ids=["B", "A"])
        np.testing.assert_array_equal(panel.counts, [[0], [2]])

    def test_unknown_region(self, tmp_path):
        rows = [("2020-03-01", "A", 2), ("2020-03-01", "Q", 1)]
        with pytest.raises(DataError, match=r"counts\.csv:3: unknown region id 'Q'"):
            load_counts(counts_file(tmp_path, rows), mode="daily", region_ids=["A"])

    def test_malformed_line(self, tmp_path):
        path = write(tmp_path, "counts.csv", "date,region_id,value\n2020-03-01,A,1\n2020-03-02,A\n")
        with pytest.raises(DataError, match=r"counts\.csv:3: expected 3 fields, got 2"):
            load_counts(path, mode="daily")

    def test_invalid_date(self, tmp_path):
        with pytest.raises(DataError, match=r":2: invalid date"):
            load_counts(counts_file(tmp_path, [("March 1", "A", 1)]), mode="daily")

    def test_duplicate_cell(self, tmp_path):
        rows = [("2020-03-01", "A", 1), ("2020-03-01", "A", 2)]
        with pytest.raises(DataError, match="duplicate entry"):
            load_counts(counts_file(tmp_path, rows), mode="daily")

    def test_dates_must_increase(self, tmp_path):
        rows = [("2020-03-02", "A", 1), ("2020-03-01", "A", 2)]
        with pytest.raises(DataError, match="not increasing"):
            load_counts(counts_file(tmp_path, rows), mode="daily")

    def test_negative_daily_count(self, tmp_path):
        with pytest.raises(DataError, match="negative daily count"):
            load_counts(counts_file(tmp_path, [("2020-03-01", "A", -1)]), mode="daily")

    def test_gaps_are_listed(self, tmp_path):
        rows = [("2020-03-01", "A", 1), ("2020-03-01", "B", 1), ("2020-03-03", "A", 1), ("2020-03-03", "B", 1)]
        with pytest.raises(DataError, match=r"2 missing cells: A@2020-03-02, B@2020-03-02"):
            load_counts(counts_file(tmp_path, rows), mode="daily")

    def test_region_without_observations(self, tmp_path):
        with pytest.raises(DataError, match="no observations for regions"):
            load_counts(counts_file(tmp_path, [("2020-03-01", "A", 1)]), mode="daily", region_ids=["A", "B"])

    def test_unknown_mode(self, tmp_path):
        with pytest.raises(DataError, match="unknown count mode"):
            load_counts(counts_file(tmp_path, [("2020-03-01", "A", 1)]), mode="weekly")

    def test_single_cumulative_date(self, tmp_path):
        with pytest.raises(DataError, match="at least two dates"):
            load_counts(counts_file(tmp_path, [("2020-03-01", "A", 1)]))


class TestMergePanel:

    def test_rows_are_summed(self, path3):
        panel = make_panel(path3, np.array([[1, 2], [3, 4], [5, 6]]))
        merged = merge_panel(panel, {"R2": ("S", "South"), "R3": ("S", "South")})
        assert merged.region_ids == ["R1", "S"]
        np.testing.assert_array_equal(merged.counts, [[1, 2], [8, 10]])


class TestExportedFilesReadBack:

    @pytest.mark.parametrize("mode", ["cumulative", "daily"])
    def test_panel_and_regions(self, tmp_path, rng, mode):
        regions = path_regions(4)
        panel = make_panel(regions, rng.poisson(6.0, size=(4, 9)))
        DataExporter.export_regions(regions, tmp_path)
        DataExporter.export_counts(panel, tmp_path, mode=mode)

        loaded_regions = load_regions(tmp_path / "regions.csv", tmp_path / "adjacency.csv")
        loaded = load_counts(tmp_path / "counts.csv", mode=mode, region_ids=loaded_regions.ids)
        assert loaded_regions.ids == regions.ids
        np.testing.assert_array_equal(loaded_regions.populations, regions.populations)
        assert [sorted(r.neighbors) for r in loaded_regions.regions] == [sorted(r.neighbors) for r in regions.regions]
        assert loaded.dates == panel.dates
        np.testing.assert_array_equal(loaded.counts, panel.counts)


class TestToyData:

    def test_toy_panel(self):
        regions = load_regions(TOY / "regions.csv", TOY / "adjacency.csv")
        panel = load_counts(TOY / "counts.csv", region_ids=regions.ids)
        assert regions.m == 5
        assert panel.T == 90
        assert panel.counts.min() >= 0

    def test_toy_merge(self):
        merge = read_merge(TOY / "merge.csv")
        regions = load_regions(TOY / "regions.csv", TOY / "adjacency.csv", TOY / "merge.csv")
        panel = merge_panel(load_counts(TOY / "counts.csv"), merge)
        assert regions.m == 4
        assert regions.ids == panel.region_ids
        south = regions.regions[regions.ids.index("S")]
        assert south.population == 8.1e6
        assert south.neighbors == ["C"]
