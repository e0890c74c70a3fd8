"""RSSI fingerprint dataset handling.

Loads labelled/unlabelled beacon CSVs, decodes grid-cell location labels,
splits, histograms, and generates synthetic corpora from a log-distance
path-loss model for tests and offline runs.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import LayoutError, MalformedLabelError, RowError, SchemaError

GRID_SIZE = 25
NO_SIGNAL = -200.0
DEFAULT_CELL_FEET = 10.0

_DEFAULT_LAYOUT_PATH = Path(__file__).parent / "layouts" / "default_layout.json"


@dataclass(frozen=True)
class BeaconLayout:
    """Ordered beacon identifiers with their grid positions.

    ``ids[i]`` transmits from ``(xs[i], ys[i])`` in grid units; one grid
    cell is ``cell_feet`` feet on a side.
    """

    ids: tuple[str, ...]
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    cell_feet: float = DEFAULT_CELL_FEET

    def __post_init__(self):
        if len(self.ids) != len(self.xs) or len(self.ids) != len(self.ys):
            raise LayoutError("beacon id and coordinate counts differ")
        if len(set(self.ids)) != len(self.ids):
            raise LayoutError("duplicate beacon identifiers")
        for bid, x, y in zip(self.ids, self.xs, self.ys):
            if not (0 <= x < GRID_SIZE and 0 <= y < GRID_SIZE):
                raise LayoutError(f"beacon {bid} at ({x}, {y}) outside the {GRID_SIZE}x{GRID_SIZE} grid")

    @property
    def n_beacons(self) -> int:
        return len(self.ids)

    def index_of(self, beacon_id: str) -> int:
        try:
            return self.ids.index(beacon_id)
        except ValueError:
            raise LayoutError(f"unknown beacon id {beacon_id!r}") from None


@dataclass(frozen=True)
class GridPoint:
    x: float
    y: float

    def distance_to(self, other: "GridPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class LabelledSample:
    rssi: tuple[float, ...]
    location: GridPoint
    label: str
    timestamp: str = ""


@dataclass(frozen=True)
class UnlabelledSample:
    rssi: tuple[float, ...]
    timestamp: str = ""


@dataclass(frozen=True)
class Dataset:
    labelled: tuple[LabelledSample, ...]
    unlabelled: tuple[UnlabelledSample, ...]
    layout: BeaconLayout

    def with_labelled(self, labelled: Iterable[LabelledSample]) -> "Dataset":
        return replace(self, labelled=tuple(labelled))


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance propagation model for synthetic RSSI generation."""

    reference_power: float = -45.0  # dBm at d0
    exponent: float = 2.2
    reference_distance: float = 1.0  # grid units
    noise_std: float = 2.0  # dB
    detection_floor: float = -95.0  # dBm; weaker readings become no-signal

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError("path-loss exponent must be positive")
        if self.detection_floor < NO_SIGNAL:
            raise ValueError("detection floor below the no-signal value")


def encode_location_label(point: GridPoint) -> str:
    """Inverse of :func:`decode_location_label`; integer cells only."""
    col = int(point.x)
    row = int(point.y)
    if not (0 <= col < GRID_SIZE and 0 <= row < GRID_SIZE):
        raise MalformedLabelError(f"cell ({col}, {row}) outside grid")
    return f"{chr(ord('A') + col)}{row:02d}"


def decode_location_label(label: str) -> GridPoint:
    """Decode a ``<letter><digits>`` grid label to a GridPoint.

    The letter A..Y selects the column (A -> 0) and the digits select the
    row (must be < 25).
    """
    if len(label) < 2:
        raise MalformedLabelError(f"label {label!r} too short")
    letter, digits = label[0], label[1:]
    col = ord(letter.upper()) - ord("A")
    if not (0 <= col < GRID_SIZE):
        raise MalformedLabelError(f"label {label!r}: letter must be A..Y")
    if not digits.isdigit():
        raise MalformedLabelError(f"label {label!r}: row part is not numeric")
    row = int(digits)
    if row >= GRID_SIZE:
        raise MalformedLabelError(f"label {label!r}: row {row} >= {GRID_SIZE}")
    return GridPoint(float(col), float(row))


def load_layout(path: str | Path) -> BeaconLayout:
    """Read a layout JSON file: grid size, cell feet, beacon positions."""
    with open(path) as f:
        doc = json.load(f)
    grid = doc.get("grid", [GRID_SIZE, GRID_SIZE])
    if list(grid) != [GRID_SIZE, GRID_SIZE]:
        raise LayoutError(f"unsupported grid {grid}, expected [{GRID_SIZE}, {GRID_SIZE}]")
    beacons = doc["beacons"]
    return BeaconLayout(
        ids=tuple(b["id"] for b in beacons),
        xs=tuple(float(b["x"]) for b in beacons),
        ys=tuple(float(b["y"]) for b in beacons),
        cell_feet=float(doc.get("cell_feet", DEFAULT_CELL_FEET)),
    )


def save_layout(layout: BeaconLayout, path: str | Path) -> None:
    doc = {
        "grid": [GRID_SIZE, GRID_SIZE],
        "cell_feet": layout.cell_feet,
        "beacons": [
            {"id": bid, "x": x, "y": y}
            for bid, x, y in zip(layout.ids, layout.xs, layout.ys)
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def default_layout() -> BeaconLayout:
    return load_layout(_DEFAULT_LAYOUT_PATH)


def _parse_rssi_row(fields: Sequence[str], n_beacons: int, line: int) -> tuple[float, ...]:
    values = []
    for raw in fields:
        try:
            v = float(raw)
        except ValueError:
            raise RowError(line, f"non-numeric RSSI value {raw!r}") from None
        if not (NO_SIGNAL <= v <= 0.0):
            raise RowError(line, f"RSSI {v} outside [{NO_SIGNAL}, 0]")
        values.append(v)
    return tuple(values)


def parse_labelled_csv(stream: io.TextIOBase | str, layout: BeaconLayout) -> tuple[LabelledSample, ...]:
    """Parse a ``location,date,<beacons...>`` CSV into labelled samples."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty labelled CSV") from None
    expected = 2 + layout.n_beacons
    if len(header) != expected or header[0].strip().lower() != "location" or header[1].strip().lower() != "date":
        raise SchemaError(
            f"labelled header must be location,date,<{layout.n_beacons} beacon columns>; got {len(header)} columns"
        )
    samples = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != expected:
            raise RowError(lineno, f"expected {expected} columns, got {len(row)}")
        label = row[0].strip()
        location = decode_location_label(label)
        rssi = _parse_rssi_row(row[2:], layout.n_beacons, lineno)
        samples.append(LabelledSample(rssi=rssi, location=location, label=label, timestamp=row[1].strip()))
    return tuple(samples)


def parse_unlabelled_csv(stream: io.TextIOBase | str, layout: BeaconLayout) -> tuple[UnlabelledSample, ...]:
    """Parse a ``date,<beacons...>`` CSV into unlabelled samples."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty unlabelled CSV") from None
    expected = 1 + layout.n_beacons
    if len(header) != expected or header[0].strip().lower() != "date":
        raise SchemaError(
            f"unlabelled header must be date,<{layout.n_beacons} beacon columns>; got {len(header)} columns"
        )
    samples = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != expected:
            raise RowError(lineno, f"expected {expected} columns, got {len(row)}")
        rssi = _parse_rssi_row(row[1:], layout.n_beacons, lineno)
        samples.append(UnlabelledSample(rssi=rssi, timestamp=row[0].strip()))
    return tuple(samples)


def load_dataset(labelled_path: str | Path, unlabelled_path: str | Path | None, layout: BeaconLayout) -> Dataset:
    with open(labelled_path, newline="") as f:
        labelled = parse_labelled_csv(f, layout)
    unlabelled: tuple[UnlabelledSample, ...] = ()
    if unlabelled_path is not None:
        with open(unlabelled_path, newline="") as f:
            unlabelled = parse_unlabelled_csv(f, layout)
    return Dataset(labelled=labelled, unlabelled=unlabelled, layout=layout)


def write_labelled_csv(samples: Iterable[LabelledSample], layout: BeaconLayout, path: str | Path,
                       sources: Sequence[str] | None = None) -> None:
    """Write labelled samples; with ``sources`` an extra provenance column is added."""
    samples = list(samples)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["location", "date", *layout.ids]
        if sources is not None:
            header.append("source")
        writer.writerow(header)
        for i, s in enumerate(samples):
            row = [s.label, s.timestamp, *(_fmt(v) for v in s.rssi)]
            if sources is not None:
                row.append(sources[i])
            writer.writerow(row)


def write_unlabelled_csv(samples: Iterable[UnlabelledSample], layout: BeaconLayout, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["date", *layout.ids])
        for s in samples:
            writer.writerow([s.timestamp, *(_fmt(v) for v in s.rssi)])


def _fmt(v: float) -> str:
    return repr(v) if v != int(v) else str(int(v))


def split(samples: Sequence[LabelledSample], ratio: float, seed: int) -> tuple[tuple[LabelledSample, ...], tuple[LabelledSample, ...]]:
    """Seeded shuffle then prefix/suffix cut; train size = floor(ratio * N)."""
    if not (0.0 <= ratio <= 1.0):
        raise ValueError(f"split ratio {ratio} outside [0, 1]")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(samples))
    n_train = int(math.floor(ratio * len(samples)))
    train = tuple(samples[i] for i in order[:n_train])
    test = tuple(samples[i] for i in order[n_train:])
    return train, test


def cell_of(sample: LabelledSample) -> tuple[int, int]:
    return (int(math.floor(sample.location.x)), int(math.floor(sample.location.y)))


def sample_histogram(samples: Iterable[LabelledSample]) -> np.ndarray:
    """Count samples per grid cell; shape (25, 25) indexed [x, y]."""
    grid = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.int64)
    for s in samples:
        cx, cy = cell_of(s)
        grid[cx, cy] += 1
    return grid


def find_underrepresented(samples: Sequence[LabelledSample], threshold: int) -> list[tuple[tuple[int, int], list[LabelledSample]]]:
    """Cells holding at least one but fewer than ``threshold`` samples.

    Returned in deterministic dataset order of first appearance; each cell
    carries its samples in dataset order.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    by_cell: dict[tuple[int, int], list[LabelledSample]] = {}
    for s in samples:
        by_cell.setdefault(cell_of(s), []).append(s)
    return [(cell, group) for cell, group in by_cell.items() if len(group) < threshold]


def synth_rssi(layout: BeaconLayout, model: PathLossModel, x: float, y: float,
               rng: np.random.Generator) -> tuple[float, ...]:
    """One RSSI vector at grid position (x, y) under the path-loss model."""
    values = []
    for bx, by in zip(layout.xs, layout.ys):
        dist = max(math.hypot(bx - x, by - y), model.reference_distance)
        rssi = model.reference_power - 10.0 * model.exponent * math.log10(dist / model.reference_distance)
        if model.noise_std > 0:
            rssi += rng.normal(0.0, model.noise_std)
        if rssi < model.detection_floor:
            rssi = NO_SIGNAL
        values.append(min(max(rssi, NO_SIGNAL), 0.0))
    return tuple(values)


def synth_generate(layout: BeaconLayout, model: PathLossModel, n_locations: int,
                   samples_per_location: int, seed: int, n_unlabelled: int = 0) -> Dataset:
    """Deterministic synthetic corpus: labelled samples at integer grid cells
    plus optional unlabelled samples at random continuous positions."""
    if n_locations < 1 or samples_per_location < 1:
        raise ValueError("counts must be >= 1")
    if n_locations > GRID_SIZE * GRID_SIZE:
        raise ValueError(f"at most {GRID_SIZE * GRID_SIZE} distinct grid locations")
    rng = np.random.Generator(np.random.PCG64(seed))
    cells = rng.choice(GRID_SIZE * GRID_SIZE, size=n_locations, replace=False)
    labelled = []
    for k, flat in enumerate(cells):
        cx, cy = int(flat) // GRID_SIZE, int(flat) % GRID_SIZE
        point = GridPoint(float(cx), float(cy))
        label = encode_location_label(point)
        for j in range(samples_per_location):
            rssi = synth_rssi(layout, model, point.x, point.y, rng)
            labelled.append(LabelledSample(rssi=rssi, location=point, label=label,
                                           timestamp=f"synth-{k}-{j}"))
    unlabelled = []
    for k in range(n_unlabelled):
        x = rng.uniform(0.0, GRID_SIZE)
        y = rng.uniform(0.0, GRID_SIZE)
        rssi = synth_rssi(layout, model, x, y, rng)
        unlabelled.append(UnlabelledSample(rssi=rssi, timestamp=f"synth-u-{k}"))
    return Dataset(labelled=tuple(labelled), unlabelled=tuple(unlabelled), layout=layout)
