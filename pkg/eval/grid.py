"""Experiment grids: every cell trains and evaluates a fresh model.

A grid is described by a JSON file (see ``eval/benchmarks/grids``):

    {
        "name": "table3",
        "title": "...",
        "base": {"fusion": "attention"},
        "row_name": "# Head",
        "rows": [{"label": "2", "set": {"heads": 2}}, ...],
        "col_name": "# Transform layers for attention map",
        "cols": [{"label": "0", "set": {"layers": 0}}, ...],
        "reference": {"2": {"0": 75.67, ...}, ...}
    }

``reference`` holds published full-scale accuracies; it is rendered next to
the results and never compared against them.
"""
import json
import time
import numpy as np
import pandas as pd

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from tqdm import tqdm

from core.dataset import Dataset
from core.errors import ConfigurationError, TagASCError
from core.trainer import TrainConfig, TrainLogger, config_hash, train_and_evaluate

__all__ = ["GRIDS_DIR", "MIRRORS", "GridAxes", "GridCell", "CellResult", "GridResult",
           "run_grid", "load_results"]


GRIDS_DIR = Path(__file__).parent / "benchmarks" / "grids"
MIRRORS = ("table2", "table3", "table4", "table5")


@dataclass
class GridCell:
    row: str
    col: str
    overrides: Dict


@dataclass
class GridAxes:
    """Rows x columns of config overrides on top of a base config."""
    name: str
    rows: List[Tuple[str, Dict]]
    cols: List[Tuple[str, Dict]]
    row_name: str = ""
    col_name: str = ""
    title: str = ""
    base: Dict = field(default_factory=dict)
    reference: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, values: Dict) -> "GridAxes":
        try:
            axes = cls(name=values["name"],
                       rows=[(str(r["label"]), dict(r.get("set", {}))) for r in values["rows"]],
                       cols=[(str(c["label"]), dict(c.get("set", {}))) for c in values["cols"]],
                       row_name=values.get("row_name", ""), col_name=values.get("col_name", ""),
                       title=values.get("title", ""), base=dict(values.get("base", {})),
                       reference=values.get("reference", {}))
        except (KeyError, TypeError) as err:
            raise ConfigurationError("grid", f"malformed grid description: {err}")
        axes.validate()
        return axes

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GridAxes":
        try:
            with open(path, "r") as fr:
                return cls.from_dict(json.load(fr))
        except FileNotFoundError:
            raise ConfigurationError("grid", f"file not found: {path}")

    @classmethod
    def mirror(cls, name: str) -> "GridAxes":
        if name not in MIRRORS:
            raise ConfigurationError("grid", f"unknown mirror '{name}', expected one of {MIRRORS}")
        return cls.load(GRIDS_DIR / f"{name}.json")

    def validate(self):
        if not self.rows or not self.cols:
            raise ConfigurationError("grid", f"'{self.name}' needs non-empty rows and columns")

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.rows), len(self.cols)

    def cells(self) -> List[GridCell]:
        return [GridCell(r, c, {**self.base, **r_set, **c_set})
                for r, r_set in self.rows for c, c_set in self.cols]


@dataclass
class CellResult:
    """One grid cell. ``accuracy`` is None when the cell failed."""
    row: str
    col: str
    config_hash: str
    seed: int
    accuracy: Optional[float]
    runtime: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class GridResult:
    axes: GridAxes
    cells: List[CellResult]

    def table(self) -> pd.DataFrame:
        data = pd.DataFrame(np.nan, index=[r for r, _ in self.axes.rows],
                            columns=[c for c, _ in self.axes.cols])
        for cell in self.cells:
            if cell.ok:
                data.loc[cell.row, cell.col] = cell.accuracy
        data.index.name = self.axes.row_name
        data.columns.name = self.axes.col_name
        return data

    def reference_table(self) -> Optional[pd.DataFrame]:
        if not self.axes.reference:
            return None
        data = pd.DataFrame(np.nan, index=[r for r, _ in self.axes.rows],
                            columns=[c for c, _ in self.axes.cols])
        for row, values in self.axes.reference.items():
            for col, acc in values.items():
                if row in data.index and col in data.columns:
                    data.loc[row, col] = acc
        return data

    def render(self) -> str:
        """Aligned text table; the maximum of every row (of the column, for a
        single-column grid) is wrapped in ``**``."""
        lines = [self.axes.title or self.axes.name, _render(self.table(), self.axes)]
        reference = self.reference_table()
        if reference is not None:
            lines += ["", "reference (published, full scale):", _render(reference, self.axes)]
        failed = [c for c in self.cells if not c.ok]
        if failed:
            lines += [""] + [f"failed {c.row}/{c.col}: {c.error}" for c in failed]
        return "\n".join(lines)

    def records(self) -> List[Dict]:
        return [{"grid": self.axes.name, **asdict(c)} for c in self.cells]

    def write_jsonl(self, path: Union[str, Path]):
        with open(path, "w") as fw:
            for record in self.records():
                fw.write(json.dumps(record, sort_keys=True) + "\n")


def _render(table: pd.DataFrame, axes: GridAxes) -> str:
    cells = [[axes.row_name or ""] + [str(c) for c in table.columns]]
    # a single column is ranked as a whole
    column_best = table.iloc[:, 0].max(skipna=True) if table.shape[1] == 1 else None
    for label, row in table.iterrows():
        best = row.max(skipna=True) if column_best is None else column_best
        cells.append([str(label)] + [
            "-" if np.isnan(v) else (f"**{v:.2f}**" if v == best else f"{v:.2f}") for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    out = [" | ".join(s.rjust(w) for s, w in zip(r, widths)) for r in cells]
    out.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(out)


def _run_cell(cell: GridCell, base_cfg: TrainConfig, dataset: Dataset) -> CellResult:
    start = time.perf_counter()
    values = {**base_cfg.to_dict(), **cell.overrides}
    try:
        cfg = TrainConfig.from_flat(values)
        result = train_and_evaluate(dataset, cfg)
        return CellResult(cell.row, cell.col, cfg.config_hash(), cfg.seed, result.accuracy,
                          result.runtime)
    except Exception as err:  # a failing cell must not stop the grid
        message = err.log_info() if isinstance(err, TagASCError) else f"{type(err).__name__}: {err}"
        return CellResult(cell.row, cell.col, config_hash(values),
                          values.get("seed", base_cfg.seed), None, time.perf_counter() - start,
                          message)


def run_grid(base_cfg: TrainConfig, axes: GridAxes, dataset: Dataset,
             logger: Optional[TrainLogger] = None, n_jobs: int = 1) -> GridResult:
    """Train and evaluate every cell with a fresh model seeded by the cell config."""
    axes.validate()
    logger = logger or TrainLogger(is_open=False)
    cells = axes.cells()
    logger.log(f"grid '{axes.name}': {axes.shape[0]} x {axes.shape[1]} = {len(cells)} cells")

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(tqdm(pool.map(lambda c: _run_cell(c, base_cfg, dataset), cells),
                                total=len(cells), desc="cells", disable=not logger.is_open))
    else:
        results = [_run_cell(c, base_cfg, dataset)
                   for c in tqdm(cells, desc="cells", disable=not logger.is_open)]

    for res in results:
        key = f"{res.row}/{res.col}"
        if res.ok:
            logger.append('cell', key, (0, {"accuracy": res.accuracy, "seed": res.seed,
                                            "config_hash": res.config_hash,
                                            "runtime": res.runtime}))
            logger.log(f"cell {key}: {res.accuracy:.2f}%")
        else:
            logger.append('cell', key, (1, {"error": res.error}))
            logger.log(f"cell {key} failed: {res.error}")
    return GridResult(axes, results)


def load_results(path: Union[str, Path]) -> pd.DataFrame:
    """Read a JSON-lines results file back as a table."""
    return pd.read_json(path, lines=True, dtype={"row": str, "col": str, "config_hash": str})
