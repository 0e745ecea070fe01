"""Hyperspectral cube ingestion, per-class splits, and pixel extraction.

A cube lives on disk as a "bundle" directory::

    header.json   {"height": H, "width": W, "bands": B, "classes": C,
                   "dtype": "f64le", "label_dtype": "i32le", "order": "band-major"}
    data.bin      H*W*B float64 little-endian, flat index ((b*H + r)*W + c)
    labels.bin    H*W int32 little-endian, row-major (r*W + c)

Label 0 means "unlabeled"; classes are 1..C.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_HEADER_NAME = "header.json"
_DATA_NAME = "data.bin"
_LABELS_NAME = "labels.bin"

_MASK64 = 0xFFFFFFFFFFFFFFFF


class BundleFormatError(Exception):
    """A bundle file is malformed; ``field`` names the offending piece."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class SplitMix64:
    """Tiny 64-bit PRNG (splitmix-style) so shuffles reproduce across languages."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1FE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def shuffle(self, items: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle; index draws by modulo of next_u64."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


@dataclass
class LabeledCube:
    """A hyperspectral data block plus per-pixel integer class labels.

    ``data`` has shape (height, width, bands) float64; ``labels`` has shape
    (height, width) int32 with 0 = unlabeled and 1..C = class ids.
    """

    data: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.data.ndim != 3:
            raise BundleFormatError("data", f"expected 3-D array, got {self.data.ndim}-D")
        h, w, b = self.data.shape
        if b < 1 or h < 1 or w < 1:
            raise BundleFormatError("data", f"degenerate extents {self.data.shape}")
        if self.labels.shape != (h, w):
            raise BundleFormatError(
                "labels", f"shape {self.labels.shape} does not match data grid {(h, w)}")
        if not np.isfinite(self.data).all():
            raise BundleFormatError("data", "non-finite values present")
        if (self.labels < 0).any():
            raise BundleFormatError("labels", "negative label present")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max(initial=0))

    def labeled_ids(self) -> np.ndarray:
        """Flat row-major indices (r*width + c) of all labeled pixels."""
        return np.flatnonzero(self.labels.ravel() > 0)

    def class_ids(self, class_id: int) -> np.ndarray:
        """Flat indices of pixels labeled ``class_id``, ascending."""
        return np.flatnonzero(self.labels.ravel() == class_id)


def load_bundle(path) -> LabeledCube:
    """Read a bundle directory into a LabeledCube, byte-exact, no scaling."""
    root = Path(path)
    header_path = root / _HEADER_NAME
    data_path = root / _DATA_NAME
    labels_path = root / _LABELS_NAME
    for p in (header_path, data_path, labels_path):
        if not p.is_file():
            raise FileNotFoundError(f"bundle file missing: {p}")

    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise BundleFormatError("header.json", f"invalid JSON ({exc})") from exc

    for key in ("height", "width", "bands", "classes"):
        if key not in header:
            raise BundleFormatError(key, "missing from header.json")
        if not isinstance(header[key], int) or header[key] < 0:
            raise BundleFormatError(key, f"expected nonnegative integer, got {header[key]!r}")
    for key, expected in (("dtype", "f64le"), ("label_dtype", "i32le"), ("order", "band-major")):
        if header.get(key) != expected:
            raise BundleFormatError(key, f"expected {expected!r}, got {header.get(key)!r}")

    h, w, b = header["height"], header["width"], header["bands"]
    if h < 1 or w < 1 or b < 1:
        raise BundleFormatError("header.json", f"degenerate extents {(h, w, b)}")

    n_data_bytes = h * w * b * 8
    raw = data_path.read_bytes()
    if len(raw) != n_data_bytes:
        raise BundleFormatError(
            "data.bin", f"expected {n_data_bytes} bytes for {b}x{h}x{w}, got {len(raw)}")
    # band-major on disk: (bands, height, width) -> in-memory (height, width, bands)
    data = np.frombuffer(raw, dtype="<f8").reshape(b, h, w).transpose(1, 2, 0).copy()

    n_label_bytes = h * w * 4
    raw = labels_path.read_bytes()
    if len(raw) != n_label_bytes:
        raise BundleFormatError(
            "labels.bin", f"expected {n_label_bytes} bytes for {h}x{w}, got {len(raw)}")
    labels = np.frombuffer(raw, dtype="<i4").reshape(h, w).copy()

    cube = LabeledCube(data=data, labels=labels)
    if cube.n_classes != header["classes"]:
        raise BundleFormatError(
            "classes", f"header says {header['classes']}, labels.bin max is {cube.n_classes}")
    return cube


def save_bundle(cube: LabeledCube, path) -> None:
    """Write ``cube`` as a bundle directory; inverse of :func:`load_bundle`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "classes": cube.n_classes,
        "dtype": "f64le",
        "label_dtype": "i32le",
        "order": "band-major",
    }
    (root / _HEADER_NAME).write_text(json.dumps(header, sort_keys=True), encoding="utf-8")
    band_major = np.ascontiguousarray(cube.data.transpose(2, 0, 1), dtype="<f8")
    (root / _DATA_NAME).write_bytes(band_major.tobytes())
    (root / _LABELS_NAME).write_bytes(
        np.ascontiguousarray(cube.labels, dtype="<i4").tobytes())


@dataclass
class Split:
    """Disjoint per-class flat-index sets for dictionary / train / test pixels."""

    dictionary_ids: dict[int, np.ndarray]
    train_ids: dict[int, np.ndarray]
    test_ids: dict[int, np.ndarray]
    seed: int

    def _flat(self, groups: dict[int, np.ndarray]) -> np.ndarray:
        parts = [groups[c] for c in sorted(groups)] or [np.empty(0, dtype=np.int64)]
        return np.concatenate(parts)

    def dictionary_flat(self) -> np.ndarray:
        """All dictionary ids, concatenated in ascending class order."""
        return self._flat(self.dictionary_ids)

    def train_flat(self) -> np.ndarray:
        return self._flat(self.train_ids)

    def test_flat(self) -> np.ndarray:
        return self._flat(self.test_ids)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "dictionary_ids": {str(c): v.tolist() for c, v in self.dictionary_ids.items()},
            "train_ids": {str(c): v.tolist() for c, v in self.train_ids.items()},
            "test_ids": {str(c): v.tolist() for c, v in self.test_ids.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Split":
        def back(d):
            return {int(c): np.asarray(v, dtype=np.int64) for c, v in d.items()}

        return cls(
            dictionary_ids=back(doc["dictionary_ids"]),
            train_ids=back(doc["train_ids"]),
            test_ids=back(doc["test_ids"]),
            seed=int(doc["seed"]),
        )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def make_split(cube: LabeledCube, dict_frac: float = 0.01,
               train_frac: float = 1.0 / 11.0, seed: int = 0) -> Split:
    """Partition each class's labeled pixels into dictionary / train / test.

    Per class with n labeled pixels: round(dict_frac * n) go to the dictionary
    (at least 1), round(train_frac * remainder) to train, the rest to test.
    Rounding is to the nearest integer (half up). Selection is a seeded
    Fisher-Yates shuffle of the ascending flat-index list (one SplitMix64
    stream consumed class by class in ascending class order), so the split is
    a pure function of (cube, dict_frac, train_frac, seed).
    """
    if not 0.0 < dict_frac < 1.0:
        raise ValueError(f"dict_frac must lie in (0, 1), got {dict_frac}")
    if not 0.0 <= train_frac < 1.0:
        raise ValueError(f"train_frac must lie in [0, 1), got {train_frac}")
    n_classes = cube.n_classes
    if n_classes < 1:
        raise ValueError("cube has no labeled pixels")

    rng = SplitMix64(seed)
    dict_ids: dict[int, np.ndarray] = {}
    train_ids: dict[int, np.ndarray] = {}
    test_ids: dict[int, np.ndarray] = {}
    for c in range(1, n_classes + 1):
        ids = cube.class_ids(c)
        n = len(ids)
        if n == 0:
            raise ValueError(f"class {c} has no labeled pixels")
        ids = ids.copy()
        rng.shuffle(ids)
        n_dict = max(1, _round_half_up(dict_frac * n))
        n_train = _round_half_up(train_frac * (n - n_dict))
        dict_ids[c] = np.sort(ids[:n_dict])
        train_ids[c] = np.sort(ids[n_dict:n_dict + n_train])
        test_ids[c] = np.sort(ids[n_dict + n_train:])
    return Split(dictionary_ids=dict_ids, train_ids=train_ids, test_ids=test_ids, seed=seed)


def extract_pixels(cube: LabeledCube, ids, normalize: bool = True):
    """Gather spectra for flat pixel ids as columns of an (bands, n) matrix.

    Returns (matrix, labels). With ``normalize`` each column is scaled to unit
    Euclidean norm; zero-norm columns are rejected.
    """
    ids = np.asarray(ids, dtype=np.int64)
    n_pixels = cube.height * cube.width
    if ids.size and (ids.min() < 0 or ids.max() >= n_pixels):
        bad = ids[(ids < 0) | (ids >= n_pixels)][0]
        raise IndexError(f"pixel id {bad} out of range [0, {n_pixels})")
    flat_labels = cube.labels.ravel()[ids]
    if (flat_labels == 0).any():
        bad = ids[flat_labels == 0][0]
        raise ValueError(f"pixel id {bad} is unlabeled")
    spectra = cube.data.reshape(-1, cube.bands)[ids].T.astype(np.float64, copy=True)
    if normalize:
        norms = np.linalg.norm(spectra, axis=0)
        if (norms == 0).any():
            bad = ids[norms == 0][0]
            raise ValueError(f"pixel id {bad} has zero-norm spectrum; cannot normalize")
        spectra /= norms
    return spectra, flat_labels.astype(np.int64)


def load_pixel_csv(path, normalize: bool = False):
    """Read a small pixel matrix from CSV: one pixel per row, bands as columns,
    final column the integer class label. Returns (matrix bands x n, labels)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if label < 0:
                raise ValueError(f"{path}:{lineno}: negative label {label}")
            rows.append((values, label))
    if not rows:
        raise ValueError(f"{path}: no pixel rows")
    bands = len(rows[0][0])
    if bands < 1:
        raise ValueError(f"{path}: rows must have at least one band column")
    if any(len(v) != bands for v, _ in rows):
        raise ValueError(f"{path}: inconsistent column counts")
    spectra = np.array([v for v, _ in rows], dtype=np.float64).T
    labels = np.array([l for _, l in rows], dtype=np.int64)
    if not np.isfinite(spectra).all():
        raise ValueError(f"{path}: non-finite values present")
    if normalize:
        norms = np.linalg.norm(spectra, axis=0)
        if (norms == 0).any():
            raise ValueError(f"{path}: zero-norm pixel row; cannot normalize")
        spectra /= norms
    return spectra, labels


def pixels_to_cube(spectra: np.ndarray, labels: np.ndarray) -> LabeledCube:
    """Wrap a (bands, n) pixel matrix as a 1 x n cube (handy for bundling)."""
    spectra = np.asarray(spectra, dtype=np.float64)
    data = spectra.T[np.newaxis, :, :]
    grid = np.asarray(labels, dtype=np.int32)[np.newaxis, :]
    return LabeledCube(data=data, labels=grid)
