"""Dataset manifests: CSV of ``path,label,split`` with a header line."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

SPLITS = ("train", "val", "test")
PG, CG = 0, 1


@dataclass(frozen=True)
class Record:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    records: list[Record]
    root: Path = field(default_factory=Path)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def resolve(self, record: Record) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def counts(self) -> dict:
        out = {}
        for r in self.records:
            key = (r.split, r.label)
            out[key] = out.get(key, 0) + 1
        return out

    def __len__(self) -> int:
        return len(self.records)


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "split"])
        for r in manifest.records:
            w.writerow([r.path, r.label, r.split])
    return path


def read_manifest(path, check_paths: bool = True) -> DatasetManifest:
    """Parse and validate a manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "label", "split"]:
            raise ValueError(f"{path}: header must be 'path,label,split'")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            p, label, split = (x.strip() for x in row)
            if label not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1")
            if split not in SPLITS:
                raise ValueError(f"{path}:{lineno}: unknown split '{split}'")
            records.append(Record(p, int(label), split))
    manifest = DatasetManifest(records, path.parent)
    if check_paths:
        missing = [r.path for r in records if not manifest.resolve(r).exists()]
        if missing:
            raise FileNotFoundError(f"{len(missing)} manifest paths missing, e.g. {missing[0]}")
    return manifest


def split_counts(n: int) -> tuple[int, int, int]:
    """Train / val / test sizes in the ratio 4.1 : 1 : 1."""
    if n < 12:
        raise ValueError("need at least 12 images per class")
    held = int(round(n / 6.1))
    return n - 2 * held, held, held
