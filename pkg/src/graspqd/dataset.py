"""Grasp dataset files (.qdg.jsonl), dataset statistics and size rescaling.

A dataset file is UTF-8 JSON Lines. The first line is a header naming the
format version, the gripper digest and the object-size metric; every other
line is one :class:`DatasetRecord`. Floats are written as shortest
round-trip decimals and repeated as C99 hex strings (``float.hex``), which
are authoritative when reading.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

FORMAT = "qdg"
VERSION = 1
SIZE_METRIC = "aabb_diagonal"
SOURCES = ("core", "augmented")
REASONS = ("none", "body_collision", "missed_contact", "friction_cone_violation")


class DatasetError(ValueError):
    """Malformed dataset content; ``line`` is the 1-based physical line, if known."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


@dataclass(frozen=True)
class GraspRecord:
    position: tuple
    quaternion: tuple
    quality: float
    robust: bool
    failure_reason: str
    eval_seed: int

    def __post_init__(self):
        p = tuple(float(x) for x in self.position)
        q = tuple(float(x) for x in self.quaternion)
        if len(p) != 3 or len(q) != 4:
            raise ValueError("grasp needs a 3-D position and a 4-D quaternion")
        if not all(math.isfinite(x) for x in p + q):
            raise ValueError("grasp pose must be finite")
        if abs(sum(x * x for x in q) - 1) > 2e-9:
            raise ValueError(f"quaternion {q} is not unit-norm")
        quality = float(self.quality)
        if not 0 <= quality <= 1:
            raise ValueError(f"quality {quality} outside [0, 1]")
        if self.robust and quality <= 0:
            raise ValueError("a robust grasp must have positive quality")
        if self.failure_reason not in REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "quality", quality)
        object.__setattr__(self, "robust", bool(self.robust))
        object.__setattr__(self, "eval_seed", int(self.eval_seed))

    @property
    def success(self):
        return self.failure_reason == "none"

    @classmethod
    def from_elite(cls, genome, outcome):
        return cls(genome.position, genome.quaternion, outcome.quality, outcome.robust,
                   outcome.failure_reason.value, outcome.rng_seed)


@dataclass(frozen=True)
class DatasetRecord:
    """All grasps stored for one object.

    ``augmentation`` is the augmentation spec as a dict (``alpha``,
    ``reference_id``, ``rng_seed``) for augmented objects, else None.
    ``object_size`` is the AABB diagonal in meters, when known.
    """

    object_id: str
    mesh_digest: str
    source: str
    gripper_digest: str
    grasps: tuple
    config_digest: str = ""
    augmentation: Optional[dict] = None
    object_size: Optional[float] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        object.__setattr__(self, "grasps", tuple(self.grasps))
        if self.object_size is not None:
            size = float(self.object_size)
            if not (math.isfinite(size) and size > 0):
                raise ValueError("object_size must be positive")
            object.__setattr__(self, "object_size", size)

    @property
    def n_successful(self):
        return sum(g.success for g in self.grasps)


def record_from_archive(archive, object_id, mesh, gripper, config_digest="", source="core", augmentation=None):
    """Dataset record holding every elite of ``archive`` (failures included, as negatives)."""
    grasps = tuple(GraspRecord.from_elite(e.genome, e.outcome) for e in archive.elites())
    aug = augmentation.to_dict() if hasattr(augmentation, "to_dict") else augmentation
    return DatasetRecord(object_id, mesh.digest, source, gripper.digest, grasps, config_digest, aug, mesh.diagonal)


# --------------------------------------------------------------------------
# encoding

def _encode_grasp(g):
    floats = g.position + g.quaternion + (g.quality,)
    return {
        "position": list(g.position),
        "quaternion": list(g.quaternion),
        "quality": g.quality,
        "robust": g.robust,
        "failure_reason": g.failure_reason,
        "eval_seed": g.eval_seed,
        "hex": [x.hex() for x in floats],
    }


def _encode_record(r):
    out = {
        "object_id": r.object_id,
        "mesh_digest": r.mesh_digest,
        "source": r.source,
        "augmentation": None,
        "gripper_digest": r.gripper_digest,
        "config_digest": r.config_digest,
        "object_size": r.object_size,
        "grasps": [_encode_grasp(g) for g in r.grasps],
    }
    if r.object_size is not None:
        out["object_size_hex"] = r.object_size.hex()
    if r.augmentation is not None:
        aug = dict(r.augmentation)
        alpha = [float(a) for a in aug["alpha"]]
        aug["alpha"] = alpha
        aug["alpha_hex"] = [a.hex() for a in alpha]
        out["augmentation"] = aug
    return out


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode(records: Sequence[DatasetRecord]) -> str:
    """Full file text for ``records``; empty input gives an empty string."""
    records = list(records)
    if not records:
        return ""
    digests = {r.gripper_digest for r in records}
    if len(digests) != 1:
        raise ValueError("all records of one dataset file must share a gripper")
    header = {"format": FORMAT, "version": VERSION, "gripper_digest": digests.pop(), "size_metric": SIZE_METRIC}
    lines = [_dumps(header)] + [_dumps(_encode_record(r)) for r in records]
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text):
    """Write through a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(records: Sequence[DatasetRecord], path):
    atomic_write_text(path, encode(records))


def dataset_digest(records: Sequence[DatasetRecord]):
    """sha256 over the canonical file encoding."""
    return hashlib.sha256(encode(records).encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# decoding

def _float_pair(value, hexval, what):
    if not isinstance(hexval, str):
        raise ValueError(f"{what}: hex value missing")
    x = float.fromhex(hexval)
    if not isinstance(value, (int, float)) or isinstance(value, bool) or float(value) != x:
        raise ValueError(f"{what}: decimal {value!r} disagrees with hex {hexval}")
    return x


def _decode_grasp(d, k):
    hexes = d["hex"]
    if len(hexes) != 8:
        raise ValueError(f"grasp {k}: expected 8 hex values")
    vals = list(d["position"]) + list(d["quaternion"]) + [d["quality"]]
    if len(vals) != 8:
        raise ValueError(f"grasp {k}: bad position/quaternion length")
    x = [_float_pair(v, h, f"grasp {k}") for v, h in zip(vals, hexes)]
    if not isinstance(d["robust"], bool) or not isinstance(d["eval_seed"], int):
        raise ValueError(f"grasp {k}: bad robust flag or eval seed")
    return GraspRecord(tuple(x[:3]), tuple(x[3:7]), x[7], d["robust"], d["failure_reason"], d["eval_seed"])


def _decode_record(d):
    aug = d.get("augmentation")
    if aug is not None:
        aug = dict(aug)
        alpha = [_float_pair(v, h, "augmentation alpha") for v, h in zip(aug["alpha"], aug.pop("alpha_hex"))]
        if len(alpha) != 3:
            raise ValueError("augmentation alpha needs three values")
        aug["alpha"] = alpha
    size = d.get("object_size")
    if size is not None:
        size = _float_pair(size, d.get("object_size_hex"), "object_size")
    grasps = tuple(_decode_grasp(g, k) for k, g in enumerate(d["grasps"]))
    return DatasetRecord(d["object_id"], d["mesh_digest"], d["source"], d["gripper_digest"], grasps,
                         d.get("config_digest", ""), aug, size)


def decode(text, path=None, mesh_digests: Optional[Dict[str, str]] = None) -> List[DatasetRecord]:
    """Parse dataset text. With ``mesh_digests`` (object id to digest), digests are checked."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return []
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"unreadable header ({exc.msg})", 1, path) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise DatasetError("not a grasp dataset header", 1, path)
    if header.get("version") != VERSION:
        raise DatasetError(f"unsupported format version {header.get('version')!r}", 1, path)
    records = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
            if not isinstance(d, dict):
                raise ValueError("record is not a JSON object")
            rec = _decode_record(d)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed JSON ({exc.msg})", i, path) from None
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            raise DatasetError(msg, i, path) from None
        if rec.gripper_digest != header.get("gripper_digest"):
            raise DatasetError("gripper digest differs from the header", i, path)
        if mesh_digests is not None and rec.object_id in mesh_digests \
                and mesh_digests[rec.object_id] != rec.mesh_digest:
            raise DatasetError(f"mesh digest mismatch for object {rec.object_id!r}", i, path)
        records.append(rec)
    return records


def read_dataset(path, strict=False, mesh_digests: Optional[Dict[str, str]] = None) -> List[DatasetRecord]:
    """Read a dataset file. ``strict`` requires ``mesh_digests`` and checks every record against it."""
    if strict and mesh_digests is None:
        raise ValueError("strict mode needs the expected mesh digests")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    records = decode(text, path, mesh_digests)
    if strict:
        for r in records:
            if r.object_id not in mesh_digests:
                raise DatasetError(f"no mesh given for object {r.object_id!r}", path=path)
    return records


def bootstrap_from_record(record: DatasetRecord):
    """Bootstrap archive built from the successful grasps of a dataset record."""
    from .grasp import EvalOutcome, FailureReason, GraspGenome
    from .transfer import BootstrapArchive, SeedEntry

    entries = [SeedEntry(GraspGenome(g.position, g.quaternion),
                         EvalOutcome(True, FailureReason.NONE, quality=g.quality, robust=g.robust,
                                     rng_seed=g.eval_seed))
               for g in record.grasps if g.success]
    return BootstrapArchive(record.object_id, record.gripper_digest, tuple(entries), record.config_digest)


# --------------------------------------------------------------------------
# statistics

GRASPS_EDGES = (0, 1, 10, 100, 500, 1000, 2000, 3000, 4000, 5000, 6000, math.inf)
QUALITY_EDGES = tuple(k / 10 for k in range(11))
SIZE_EDGES = tuple(k / 20 for k in range(21)) + (math.inf,)


def _bin(values, edges):
    """Histogram counts; values past either end land in the end bins, so no mass is lost."""
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, np.asarray(values, dtype=float), side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    return np.bincount(idx, minlength=len(edges) - 1).astype(np.int64)


@dataclass
class DatasetStats:
    """Histograms and counts over a set of records, mergeable by addition.

    ``grasps_per_object`` bins each record's successful-grasp count;
    ``quality`` bins every grasp's q; ``object_size`` bins record sizes.
    ``by_source`` holds the plain counts per source tag.
    """

    grasps_edges: tuple = GRASPS_EDGES
    quality_edges: tuple = QUALITY_EDGES
    size_edges: tuple = SIZE_EDGES
    grasps_per_object: np.ndarray = None
    quality: np.ndarray = None
    object_size: np.ndarray = None
    n_records: int = 0
    n_grasps: int = 0
    n_successful: int = 0
    n_robust: int = 0
    by_source: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, edges in (("grasps_per_object", self.grasps_edges), ("quality", self.quality_edges),
                            ("object_size", self.size_edges)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(len(edges) - 1, dtype=np.int64))

    @property
    def robust_fraction(self):
        return self.n_robust / self.n_grasps if self.n_grasps else 0.0

    def merge(self, other: "DatasetStats") -> "DatasetStats":
        if (self.grasps_edges, self.quality_edges, self.size_edges) != \
                (other.grasps_edges, other.quality_edges, other.size_edges):
            raise ValueError("cannot merge stats with different bin edges")
        by_source = {k: dict(v) for k, v in self.by_source.items()}
        for k, v in other.by_source.items():
            mine = by_source.setdefault(k, {c: 0 for c in v})
            for c, n in v.items():
                mine[c] = mine.get(c, 0) + n
        return DatasetStats(
            self.grasps_edges, self.quality_edges, self.size_edges,
            self.grasps_per_object + other.grasps_per_object, self.quality + other.quality,
            self.object_size + other.object_size, self.n_records + other.n_records,
            self.n_grasps + other.n_grasps, self.n_successful + other.n_successful,
            self.n_robust + other.n_robust, dict(sorted(by_source.items())))

    def __eq__(self, other):
        if not isinstance(other, DatasetStats):
            return NotImplemented
        return self.long_table() == other.long_table() and self.by_source == other.by_source

    def long_table(self):
        """Plot-ready rows ``{histogram, bin_lo, bin_hi, count}``, non-empty bins only."""
        rows = []
        for name, edges in (("grasps_per_object", self.grasps_edges), ("quality", self.quality_edges),
                            ("object_size", self.size_edges)):
            counts = getattr(self, name)
            for i, c in enumerate(counts):
                if c:
                    rows.append({"histogram": name, "bin_lo": float(edges[i]), "bin_hi": float(edges[i + 1]),
                                 "count": int(c)})
        return rows

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["histogram", "bin_lo", "bin_hi", "count"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.long_table())
        return buf.getvalue()

    def summary(self):
        return {"n_records": self.n_records, "n_grasps": self.n_grasps, "n_successful": self.n_successful,
                "n_robust": self.n_robust, "robust_fraction": self.robust_fraction}


def compute_stats(records: Sequence[DatasetRecord], grasps_edges=GRASPS_EDGES, quality_edges=QUALITY_EDGES,
                  size_edges=SIZE_EDGES) -> DatasetStats:
    records = list(records)
    qualities = [g.quality for r in records for g in r.grasps]
    sizes = [r.object_size for r in records if r.object_size is not None]
    by_source = {}
    for r in records:
        c = by_source.setdefault(r.source, {"n_records": 0, "n_grasps": 0, "n_successful": 0, "n_robust": 0})
        c["n_records"] += 1
        c["n_grasps"] += len(r.grasps)
        c["n_successful"] += r.n_successful
        c["n_robust"] += sum(g.robust for g in r.grasps)
    return DatasetStats(
        tuple(grasps_edges), tuple(quality_edges), tuple(size_edges),
        _bin([r.n_successful for r in records], grasps_edges), _bin(qualities, quality_edges),
        _bin(sizes, size_edges), len(records), len(qualities),
        sum(r.n_successful for r in records), sum(g.robust for r in records for g in r.grasps),
        dict(sorted(by_source.items())))


# --------------------------------------------------------------------------
# rescaling

def rescale_to_reference(sizes, reference_sizes, rng_seed=0, pairing="random"):
    """Scale factors that move object sizes onto a reference size distribution.

    With ``pairing="random"`` each object gets a target drawn uniformly
    (with replacement) from ``reference_sizes``; with ``"identity"`` object
    ``i`` is paired with reference ``i``. Returns ``target / size``.
    """
    sizes = np.asarray(sizes, dtype=float)
    ref = np.asarray(reference_sizes, dtype=float)
    if sizes.size == 0 or ref.size == 0:
        raise ValueError("sizes and reference sizes must be non-empty")
    if np.any(~(sizes > 0)) or np.any(~(ref > 0)):
        raise ValueError("sizes must be positive")
    if pairing == "identity":
        if len(ref) != len(sizes):
            raise ValueError("identity pairing needs as many reference sizes as sizes")
        targets = ref
    elif pairing == "random":
        targets = ref[np.random.default_rng(rng_seed).integers(0, len(ref), size=len(sizes))]
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    return targets / sizes
