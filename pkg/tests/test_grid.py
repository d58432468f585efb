import json
import numpy as np
import pytest

from conftest import tiny_config
from core.errors import ConfigurationError
from eval.grid import MIRRORS, CellResult, GridAxes, GridResult, load_results, run_grid


def test_mirror_shapes():
    assert GridAxes.mirror("table2").shape == (8, 1)
    assert GridAxes.mirror("table3").shape == (5, 4)
    for name in MIRRORS:
        axes = GridAxes.mirror(name)
        assert set(axes.reference) <= {r for r, _ in axes.rows}


def test_unknown_mirror_and_malformed_grid(tmp_path):
    with pytest.raises(ConfigurationError):
        GridAxes.mirror("table9")
    with pytest.raises(ConfigurationError):
        GridAxes.from_dict({"name": "x", "rows": [], "cols": [{"label": "a"}]})
    path = tmp_path / "grid.json"
    path.write_text(json.dumps({"name": "x", "rows": [{"set": {}}]}))
    with pytest.raises(ConfigurationError):
        GridAxes.load(path)


def test_cells_layer_overrides_on_the_base():
    axes = GridAxes("g", rows=[("a", {"heads": 2}), ("b", {"heads": 4})],
                    cols=[("0", {"layers": 0}), ("1", {"layers": 1, "heads": 8})],
                    base={"fusion": "attention", "heads": 1})
    cells = axes.cells()
    assert [(c.row, c.col) for c in cells] == [("a", "0"), ("a", "1"), ("b", "0"), ("b", "1")]
    assert cells[0].overrides == {"fusion": "attention", "heads": 2, "layers": 0}
    assert cells[1].overrides["heads"] == 8


def test_render_marks_the_row_maximum():
    axes = GridAxes("g", rows=[("r1", {}), ("r2", {})], cols=[("a", {}), ("b", {})],
                    row_name="rows")
    result = GridResult(axes, [CellResult("r1", "a", "h", 0, 70.0, 1.0),
                               CellResult("r1", "b", "h", 0, 75.5, 1.0),
                               CellResult("r2", "a", "h", 0, 80.0, 1.0),
                               CellResult("r2", "b", "h", 0, None, 1.0, "boom")])
    text = result.render()
    assert "**75.50**" in text and "**80.00**" in text
    assert "70.00" in text and "**70.00**" not in text
    assert "failed r2/b: boom" in text
    assert np.isnan(result.table().loc["r2", "b"])


def test_single_column_is_ranked_as_a_whole():
    axes = GridAxes("g", rows=[("x", {}), ("y", {})], cols=[("Acc", {})],
                    reference={"x": {"Acc": 73.0}})
    result = GridResult(axes, [CellResult("x", "Acc", "h", 0, 60.0, 1.0),
                               CellResult("y", "Acc", "h", 0, 65.0, 1.0)])
    text = result.render()
    assert "**65.00**" in text and "**60.00**" not in text
    assert "reference" in text and "**73.00**" in text


def test_failing_cell_does_not_stop_the_grid(tmp_path, tiny_dataset):
    axes = GridAxes("tiny", rows=[("2", {"heads": 2}), ("3", {"heads": 3})],
                    cols=[("0", {"layers": 0})], base={"fusion": "attention"})
    result = run_grid(tiny_config(epochs=1), axes, tiny_dataset)
    ok, failed = result.cells
    assert ok.ok and 0.0 <= ok.accuracy <= 100.0
    assert ok.config_hash == tiny_config(epochs=1, fusion="attention", heads=2,
                                         layers=0).config_hash()
    assert not failed.ok and failed.accuracy is None
    assert "does not divide" in failed.error

    path = tmp_path / "tiny.jsonl"
    result.write_jsonl(path)
    table = load_results(path)
    assert list(table["row"]) == ["2", "3"]
    assert set(table["grid"]) == {"tiny"}
    assert table["error"].isna().tolist() == [True, False]


def test_threaded_grid_matches_serial(tiny_dataset):
    axes = GridAxes("tiny", rows=[("none", {"fusion": "none"}), ("cat", {"fusion": "codecat"})],
                    cols=[("Acc", {})])
    cfg = tiny_config(epochs=1)
    serial = run_grid(cfg, axes, tiny_dataset)
    threaded = run_grid(cfg, axes, tiny_dataset, n_jobs=2)
    assert [c.accuracy for c in serial.cells] == [c.accuracy for c in threaded.cells]


def test_heat_map_is_written(tmp_path):
    from cli import VIS_CONFIG
    from core.vis import plot_grid
    axes = GridAxes("g", rows=[("r1", {}), ("r2", {})], cols=[("a", {}), ("b", {})])
    result = GridResult(axes, [CellResult("r1", "a", "h", 0, 70.0, 1.0),
                               CellResult("r1", "b", "h", 0, 75.5, 1.0),
                               CellResult("r2", "a", "h", 0, 80.0, 1.0),
                               CellResult("r2", "b", "h", 0, None, 1.0, "boom")])
    path = tmp_path / "g.png"
    plot_grid(result.table(), VIS_CONFIG, path, "g")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
