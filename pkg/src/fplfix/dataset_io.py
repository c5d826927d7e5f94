"""Manifests, grayscale images, embedding archives and score files.

Images are handled as 2-D ``numpy.uint8`` arrays (rows x columns).  The
embedding archive is a small little-endian binary container::

    magic  b"FPEB"      4 bytes
    version u16 = 1
    dim     u32
    count   u64
    count x [subject u32, finger u16, sample u16, sensor u8, pad u8 x 3,
             dim x float32]
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from fplfix.errors import FormatError

SENSORS = ("optical", "capacitive", "synthetic")
MANIFEST_HEADER = ["image_path", "subject_id", "finger_id", "sample_id", "sensor"]
SCORE_HEADER = ["probe_key", "gallery_key", "mated", "score"]

ARCHIVE_MAGIC = b"FPEB"
ARCHIVE_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")
NORM_TOL = 1e-6


class SampleKey(NamedTuple):
    subject_id: int
    finger_id: int
    sample_id: int
    sensor: str = "synthetic"

    @property
    def instance_id(self) -> tuple[int, int]:
        return (self.subject_id, self.finger_id)

    def label(self) -> str:
        return f"{self.subject_id}-{self.finger_id}-{self.sample_id}"


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    subject_id: int
    finger_id: int
    sample_id: int
    sensor: str = "synthetic"

    @property
    def key(self) -> SampleKey:
        return SampleKey(self.subject_id, self.finger_id, self.sample_id, self.sensor)

    @property
    def instance_id(self) -> tuple[int, int]:
        """Identity class: each finger of each subject is its own instance."""
        return (self.subject_id, self.finger_id)


def parse_key(label: str) -> tuple[int, int, int]:
    try:
        subject, finger, sample = (int(p) for p in label.split("-"))
    except ValueError:
        raise FormatError(f"bad sample key {label!r}, expected subject-finger-sample") from None
    return subject, finger, sample


# ---------------------------------------------------------------- manifests


def _check_record(rec: SampleRecord, where: str) -> None:
    if rec.subject_id < 0 or rec.sample_id < 0:
        raise FormatError(f"{where}: negative id")
    if not 0 <= rec.finger_id <= 9:
        raise FormatError(f"{where}: finger_id must be in 0..9, got {rec.finger_id}")
    if rec.sensor not in SENSORS:
        raise FormatError(f"{where}: unknown sensor {rec.sensor!r}")


def load_manifest(path: str | os.PathLike) -> list[SampleRecord]:
    """Read a manifest CSV, keeping file order.

    Raises FileNotFoundError for a missing file and FormatError for a bad
    header, a malformed row (the message carries the 1-based line number) or
    a repeated (subject, finger, sample) key.
    """
    path = Path(path)
    records: list[SampleRecord] = []
    seen: dict[tuple[int, int, int], int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty file, missing header")
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise FormatError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{line_no}"
            if len(row) != len(MANIFEST_HEADER):
                raise FormatError(f"{where}: expected 5 fields, got {len(row)}")
            try:
                rec = SampleRecord(row[0], int(row[1]), int(row[2]), int(row[3]), row[4].strip())
            except ValueError:
                raise FormatError(f"{where}: non-integer id field") from None
            _check_record(rec, where)
            k = (rec.subject_id, rec.finger_id, rec.sample_id)
            if k in seen:
                raise FormatError(f"{where}: duplicate key {k} (first seen on line {seen[k]})")
            seen[k] = line_no
            records.append(rec)
    return records


def write_manifest(records: Iterable[SampleRecord], path: str | os.PathLike) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.image_path, r.subject_id, r.finger_id, r.sample_id, r.sensor])


def resolve_image_path(record: SampleRecord, manifest_path: str | os.PathLike) -> Path:
    p = Path(record.image_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# ------------------------------------------------------------------- images


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an 8-bit grayscale PNG or PGM into a ``uint8`` array."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise FormatError(f"{path}: unsupported format {im.format}")
            if im.mode != "L":
                raise FormatError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
            im.load()
            data = np.asarray(im, dtype=np.uint8).copy()
    except UnidentifiedImageError:
        raise FormatError(f"{path}: not a PNG/PGM image") from None
    except FileNotFoundError:
        raise
    except FormatError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt image ({exc})") from None
    if data.ndim != 2 or data.size == 0:
        raise FormatError(f"{path}: degenerate image shape {data.shape}")
    return data


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write a ``uint8`` array as binary PGM or PNG, chosen by suffix."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise FormatError("save_image expects a 2-D uint8 array")
    path = Path(path)
    if path.suffix.lower() == ".png":
        Image.fromarray(img, mode="L").save(path, format="PNG")
    else:
        h, w = img.shape
        path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


# ----------------------------------------------------------------- archives

_SENSOR_CODE = {s: i for i, s in enumerate(SENSORS)}


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [
            ("subject", "<u4"),
            ("finger", "<u2"),
            ("sample", "<u2"),
            ("sensor", "u1"),
            ("pad", "u1", (3,)),
            ("vec", "<f4", (dim,)),
        ]
    )


@dataclass(frozen=True, eq=False)
class EmbeddingArchive:
    """Unit-norm float32 embeddings keyed by sample.

    ``vectors`` has shape (count, dim); row i belongs to ``keys[i]``.
    """

    dim: int
    keys: tuple[SampleKey, ...]
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.size == 0 and not self.keys:
            vecs = vecs.reshape(0, self.dim)
        if vecs.ndim != 2 or vecs.shape != (len(self.keys), self.dim):
            raise FormatError(
                f"vectors shape {vecs.shape} does not match {len(self.keys)} keys x dim {self.dim}"
            )
        if len(vecs):
            norms = np.linalg.norm(vecs.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
            if bad.size:
                raise FormatError(f"record {bad[0]} has norm {norms[bad[0]]:.9f}, expected 1")
        vecs.setflags(write=False)
        object.__setattr__(self, "keys", tuple(SampleKey(*k) for k in self.keys))
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return len(self.keys)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingArchive):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.keys == other.keys
            and self.vectors.tobytes() == other.vectors.tobytes()
        )

    def instance_labels(self) -> np.ndarray:
        """Integer instance label per row, numbered in order of first appearance."""
        ids: dict[tuple[int, int], int] = {}
        return np.array([ids.setdefault(k.instance_id, len(ids)) for k in self.keys], dtype=np.int64)


def archive_payload_size(dim: int, count: int) -> int:
    return _HEADER.size + count * _record_dtype(dim).itemsize


def write_archive(archive: EmbeddingArchive, path: str | os.PathLike) -> None:
    rec = np.zeros(len(archive), dtype=_record_dtype(archive.dim))
    if len(archive):
        rec["subject"] = [k.subject_id for k in archive.keys]
        rec["finger"] = [k.finger_id for k in archive.keys]
        rec["sample"] = [k.sample_id for k in archive.keys]
        rec["sensor"] = [_SENSOR_CODE[k.sensor] for k in archive.keys]
        rec["vec"] = archive.vectors
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, archive.dim, len(archive)))
        fh.write(rec.tobytes())


def read_archive(path: str | os.PathLike) -> EmbeddingArchive:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than archive header")
    magic, version, dim, count = _HEADER.unpack_from(blob)
    if magic != ARCHIVE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != ARCHIVE_VERSION:
        raise FormatError(f"{path}: unsupported archive version {version}")
    if dim == 0:
        raise FormatError(f"{path}: zero embedding dimension")
    dt = _record_dtype(dim)
    if len(blob) != _HEADER.size + count * dt.itemsize:
        raise FormatError(
            f"{path}: payload of {len(blob) - _HEADER.size} bytes inconsistent with "
            f"{count} records of dim {dim}"
        )
    rec = np.frombuffer(blob, dtype=dt, count=count, offset=_HEADER.size)
    if count and rec["sensor"].max() >= len(SENSORS):
        raise FormatError(f"{path}: unknown sensor code")
    keys = tuple(
        SampleKey(int(s), int(f), int(n), SENSORS[int(c)])
        for s, f, n, c in zip(rec["subject"], rec["finger"], rec["sample"], rec["sensor"])
    )
    return EmbeddingArchive(dim, keys, np.array(rec["vec"], dtype=np.float32).reshape(count, dim))


# ------------------------------------------------------------------- scores


def write_scores(scores, path: str | os.PathLike) -> None:
    """Write a ScoreSet with pair information as ``probe_key,gallery_key,mated,score``.

    Rows come out sorted by (probe index, gallery index) so output is stable.
    """
    if scores.keys is None or scores.mated_pairs is None or scores.non_mated_pairs is None:
        raise ValueError("score set carries no pair keys")
    pairs = np.concatenate([scores.mated_pairs, scores.non_mated_pairs]).reshape(-1, 2)
    vals = np.concatenate([scores.mated, scores.non_mated])
    flag = np.concatenate(
        [np.ones(len(scores.mated), np.int8), np.zeros(len(scores.non_mated), np.int8)]
    )
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    labels = [k.label() if isinstance(k, SampleKey) else str(k) for k in scores.keys]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(SCORE_HEADER) + "\n")
        fh.writelines(
            f"{labels[pairs[i, 0]]},{labels[pairs[i, 1]]},{flag[i]},{float(vals[i])!r}\n"
            for i in order
        )


def read_scores(path: str | os.PathLike):
    """Load a score CSV back into a ScoreSet (keys are the label strings)."""
    from fplfix.comparator import ScoreSet

    keys: dict[str, int] = {}
    pairs: list[list[tuple[int, int]]] = [[], []]
    vals: list[list[float]] = [[], []]
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SCORE_HEADER:
            raise FormatError(f"{path}: header must be {','.join(SCORE_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 or row[2].strip() not in ("0", "1"):
                raise FormatError(f"{path}:{line_no}: malformed score row")
            try:
                score = float(row[3])
            except ValueError:
                raise FormatError(f"{path}:{line_no}: bad score {row[3]!r}") from None
            m = int(row[2])
            a = keys.setdefault(row[0], len(keys))
            b = keys.setdefault(row[1], len(keys))
            pairs[m].append((a, b))
            vals[m].append(score)
    return ScoreSet(
        mated=np.array(vals[1], dtype=np.float64),
        non_mated=np.array(vals[0], dtype=np.float64),
        mated_pairs=np.array(pairs[1], dtype=np.int64).reshape(-1, 2),
        non_mated_pairs=np.array(pairs[0], dtype=np.int64).reshape(-1, 2),
        keys=tuple(keys),
    )


# ----------------------------------------------------------------- minutiae

MINUTIAE_HEADER = ["subject_id", "finger_id", "sample_id", "x", "y", "theta_deg"]


def write_minutiae_csv(table: dict, path: str | os.PathLike) -> None:
    """``table`` maps (subject, finger, sample) to a list of Minutia."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(MINUTIAE_HEADER) + "\n")
        for (s, f, n), mins in sorted(table.items()):
            for m in mins:
                fh.write(f"{s},{f},{n},{m.x:.4f},{m.y:.4f},{np.degrees(m.theta):.4f}\n")


def read_minutiae_csv(path: str | os.PathLike) -> dict:
    from fplfix.minutiae import Minutia

    table: dict[tuple[int, int, int], list] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MINUTIAE_HEADER:
            raise FormatError(f"{path}: header must be {','.join(MINUTIAE_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                s, f, n = int(row[0]), int(row[1]), int(row[2])
                x, y, t = float(row[3]), float(row[4]), float(row[5])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{line_no}: malformed minutia row") from None
            table.setdefault((s, f, n), []).append(Minutia(x, y, np.radians(t) % (2 * np.pi)))
    return table
