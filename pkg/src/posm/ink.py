"""Data model and readers/writers for online handwriting.

Strokes hold their points as an ``(n, 3)`` float64 array of ``(x, y, t)``
rows, with ``t`` in milliseconds. A stroke is either entirely on-surface
(``pen_down=True``) or an in-air trace.
"""
from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

SPLITS = ("pretrain", "train", "validation", "test")
GENDERS = ("male", "female", "unknown")
HANDEDNESS = ("left", "right", "unknown")


class InkFormatError(ValueError):
    """Malformed handwriting input. The message always carries a location."""


class SamplePoint(NamedTuple):
    x: float
    y: float
    t: float
    pen_down: bool


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Stroke:
    xyt: np.ndarray
    pen_down: bool = True

    def __post_init__(self):
        xyt = _frozen(self.xyt)
        if xyt.ndim != 2 or xyt.shape[1] != 3 or len(xyt) == 0:
            raise ValueError(f"stroke needs an (n>=1, 3) array, got shape {xyt.shape}")
        if not np.all(np.isfinite(xyt)):
            raise ValueError("stroke contains non-finite values")
        if np.any(np.diff(xyt[:, 2]) < 0):
            raise ValueError("non-monotonic timestamp within stroke")
        object.__setattr__(self, "xyt", xyt)
        object.__setattr__(self, "pen_down", bool(self.pen_down))

    def __len__(self) -> int:
        return len(self.xyt)

    def __eq__(self, other):
        if not isinstance(other, Stroke):
            return NotImplemented
        return self.pen_down == other.pen_down and np.array_equal(self.xyt, other.xyt)

    def __hash__(self):
        return hash((self.pen_down, self.xyt.tobytes()))

    @property
    def points(self) -> list[SamplePoint]:
        return [SamplePoint(float(x), float(y), float(t), self.pen_down) for x, y, t in self.xyt]

    @property
    def t0(self) -> float:
        return float(self.xyt[0, 2])

    @property
    def t1(self) -> float:
        return float(self.xyt[-1, 2])


@dataclass(frozen=True)
class StrokeSet:
    id: str
    writer_id: str
    strokes: tuple[Stroke, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        strokes = tuple(self.strokes)
        object.__setattr__(self, "strokes", strokes)
        object.__setattr__(self, "metadata", dict(self.metadata))
        if not strokes:
            raise ValueError(f"strokeset {self.id!r} has no strokes")
        if not any(s.pen_down for s in strokes):
            raise ValueError(f"strokeset {self.id!r} has no pen-down points")
        for k in range(len(strokes) - 1):
            if strokes[k + 1].t0 < strokes[k].t1:
                raise ValueError(
                    f"strokeset {self.id!r}: stroke {k + 1} starts before stroke {k} ends"
                )
        g = self.metadata.get("gender", "unknown")
        h = self.metadata.get("handedness", "unknown")
        if g not in GENDERS:
            raise ValueError(f"strokeset {self.id!r}: bad gender {g!r}")
        if h not in HANDEDNESS:
            raise ValueError(f"strokeset {self.id!r}: bad handedness {h!r}")

    def __hash__(self):
        return hash((self.id, self.writer_id, self.strokes))

    @property
    def gender(self) -> str:
        return self.metadata.get("gender", "unknown")

    @property
    def handedness(self) -> str:
        return self.metadata.get("handedness", "unknown")

    @property
    def n_points(self) -> int:
        return sum(len(s) for s in self.strokes)


@dataclass(frozen=True)
class Corpus:
    strokesets: tuple[StrokeSet, ...]
    splits: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "strokesets", tuple(self.strokesets))
        object.__setattr__(self, "splits", dict(self.splits))
        ids = [s.id for s in self.strokesets]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate strokeset id in corpus")
        known = set(ids)
        for sid, split in self.splits.items():
            if sid not in known:
                raise ValueError(f"split assigned to unknown strokeset {sid!r}")
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r} for {sid!r}")

    def __len__(self) -> int:
        return len(self.strokesets)

    def __hash__(self):
        return hash((self.strokesets, tuple(sorted(self.splits.items()))))

    def split(self, name: str) -> list[StrokeSet]:
        return [s for s in self.strokesets if self.splits.get(s.id) == name]

    def by_id(self, sid: str) -> StrokeSet:
        for s in self.strokesets:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def writers(self) -> list[str]:
        return sorted({s.writer_id for s in self.strokesets})


def paragraph_splits(per_writer: int) -> list[str]:
    """Split tags for one writer's paragraphs, in order: the first half (rounded
    up) for pretraining, one for validation when at least two remain, the rest test."""
    n_pre = (per_writer + 1) // 2
    rest = per_writer - n_pre
    tail = (["validation"] + ["test"] * (rest - 1)) if rest >= 2 else ["test"] * rest
    return ["pretrain"] * n_pre + tail


def default_splits(strokesets: Iterable[StrokeSet]) -> dict[str, str]:
    """Apply ``paragraph_splits`` per writer, ordering paragraphs by id."""
    by_writer: dict[str, list[str]] = {}
    for ss in strokesets:
        by_writer.setdefault(ss.writer_id, []).append(ss.id)
    out = {}
    for ids in by_writer.values():
        ids = sorted(ids)
        out.update(zip(ids, paragraph_splits(len(ids))))
    return out


def concat_pen_down(strokeset: StrokeSet) -> np.ndarray:
    """All on-surface points of ``strokeset`` as one ``(n, 3)`` array, in time order."""
    parts = [s.xyt for s in strokeset.strokes if s.pen_down]
    if not parts:
        raise ValueError(f"strokeset {strokeset.id!r} has no pen-down points")
    return np.concatenate(parts, axis=0)


def pen_down_boundaries(strokeset: StrokeSet) -> np.ndarray:
    """Start offsets of each pen-down stroke inside ``concat_pen_down`` output."""
    lengths = [len(s) for s in strokeset.strokes if s.pen_down]
    return np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)


# --- interchange (JSON lines) -------------------------------------------------


def _strokeset_to_obj(ss: StrokeSet, split: str | None) -> dict:
    obj = {
        "id": ss.id,
        "writer": ss.writer_id,
        "meta": dict(ss.metadata),
        "strokes": [
            [[float(x), float(y), float(t), int(s.pen_down)] for x, y, t in s.xyt]
            for s in ss.strokes
        ],
    }
    if split is not None:
        obj["split"] = split
    return obj


def write_interchange(corpus: Corpus) -> bytes:
    lines = [
        json.dumps(_strokeset_to_obj(ss, corpus.splits.get(ss.id)), separators=(",", ":"))
        for ss in corpus.strokesets
    ]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def _parse_line(obj, lineno: int) -> tuple[StrokeSet, str | None]:
    where = f"line {lineno}"
    if not isinstance(obj, dict):
        raise InkFormatError(f"{where}: expected a JSON object")
    for key in ("id", "writer", "strokes"):
        if key not in obj:
            raise InkFormatError(f"{where}: missing key {key!r}")
    strokes = []
    for k, raw in enumerate(obj["strokes"]):
        try:
            arr = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise InkFormatError(f"{where}, stroke {k}: bad point data ({exc})") from None
        if arr.ndim != 2 or arr.shape[1] != 4 or len(arr) == 0:
            raise InkFormatError(f"{where}, stroke {k}: points must be [x, y, t, pen_down] rows")
        pen = arr[:, 3]
        if not np.all((pen == 0) | (pen == 1)):
            raise InkFormatError(f"{where}, stroke {k}: pen_down must be 0 or 1")
        if not np.all(pen == pen[0]):
            raise InkFormatError(f"{where}, stroke {k}: mixed pen_down values within a stroke")
        if not np.all(np.isfinite(arr[:, :3])):
            raise InkFormatError(f"{where}, stroke {k}: non-finite coordinate")
        if np.any(arr[:, 2] < 0):
            raise InkFormatError(f"{where}, stroke {k}: negative timestamp")
        bad = np.nonzero(np.diff(arr[:, 2]) < 0)[0]
        if len(bad):
            raise InkFormatError(
                f"{where}, stroke {k}, point {bad[0] + 1}: non-monotonic timestamp"
            )
        strokes.append(Stroke(arr[:, :3], bool(pen[0])))
    try:
        ss = StrokeSet(str(obj["id"]), str(obj["writer"]), tuple(strokes), obj.get("meta") or {})
    except ValueError as exc:
        raise InkFormatError(f"{where}: {exc}") from None
    return ss, obj.get("split")


def parse_interchange(data: bytes | str) -> Corpus:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    strokesets, splits, seen = [], {}, set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InkFormatError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        ss, split = _parse_line(obj, lineno)
        if ss.id in seen:
            raise InkFormatError(f"line {lineno}: duplicate strokeset id {ss.id!r}")
        seen.add(ss.id)
        strokesets.append(ss)
        if split is not None:
            if split not in SPLITS:
                raise InkFormatError(f"line {lineno}: unknown split {split!r}")
            splits[ss.id] = split
    return Corpus(tuple(strokesets), splits)


# --- IAM-style XML --------------------------------------------------------------


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1].lower()


def parse_iam_xml(
    data: bytes | str,
    strokeset_id: str | None = None,
    writer_id: str | None = None,
    time_scale: float = 1000.0,
) -> StrokeSet:
    """Read a document of ``<Stroke>`` elements holding ``<Point x= y= time=>`` children.

    ``time_scale`` converts the file's time unit to milliseconds (IAM-OnDB
    stores seconds). Times are offset so the result starts at ``t = 0``.
    Writer and form ids are taken from a ``Form`` element when present.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise InkFormatError(f"XML parse error at line {exc.position[0]}: {exc}") from None

    form = next((e for e in root.iter() if _local(e.tag) == "form"), None)
    if form is not None:
        writer_id = writer_id or form.get("writerID") or form.get("writer")
        strokeset_id = strokeset_id or form.get("id")

    raw_strokes = []
    for k, stroke_el in enumerate(e for e in root.iter() if _local(e.tag) == "stroke"):
        rows = []
        for j, pt in enumerate(e for e in stroke_el if _local(e.tag) == "point"):
            row = []
            for attr in ("x", "y", "time"):
                val = pt.get(attr)
                if val is None:
                    raise InkFormatError(f"stroke {k}, point {j}: missing attribute {attr!r}")
                try:
                    num = float(val)
                except ValueError:
                    raise InkFormatError(
                        f"stroke {k}, point {j}: unparseable number {attr}={val!r}"
                    ) from None
                if not np.isfinite(num):
                    raise InkFormatError(f"stroke {k}, point {j}: non-finite {attr}={val!r}")
                row.append(num)
            rows.append(row)
        if rows:
            raw_strokes.append(np.asarray(rows, dtype=np.float64))
    if not raw_strokes:
        raise InkFormatError("element 0: empty document (no stroke elements with points)")

    t_origin = min(s[0, 2] for s in raw_strokes)
    strokes = []
    for k, arr in enumerate(raw_strokes):
        arr = arr.copy()
        arr[:, 2] = (arr[:, 2] - t_origin) * time_scale
        bad = np.nonzero(np.diff(arr[:, 2]) < 0)[0]
        if len(bad):
            raise InkFormatError(f"stroke {k}, point {bad[0] + 1}: non-monotonic timestamp")
        strokes.append(Stroke(arr, True))
    strokes = _enforce_stroke_order(strokes)
    return StrokeSet(strokeset_id or "strokeset", writer_id or "unknown", tuple(strokes))


def _enforce_stroke_order(strokes: list[Stroke]) -> list[Stroke]:
    # Overlapping stroke clocks get pushed forward so stroke order stays temporal.
    out, last = [], -np.inf
    for s in strokes:
        if s.t0 < last:
            xyt = s.xyt.copy()
            xyt[:, 2] += last - s.t0
            s = Stroke(xyt, s.pen_down)
        out.append(s)
        last = s.t1
    return out


def merge_strokesets(parts: Iterable[StrokeSet], strokeset_id: str, writer_id: str | None = None,
                     metadata: Mapping[str, str] | None = None) -> StrokeSet:
    """Join text lines into one paragraph, in the given (document) order."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to merge")
    strokes = [s for p in parts for s in p.strokes]
    strokes = _enforce_stroke_order(strokes)
    t0 = strokes[0].t0
    shifted = [Stroke(s.xyt - np.array([0.0, 0.0, t0]), s.pen_down) for s in strokes]
    return StrokeSet(
        strokeset_id,
        writer_id or parts[0].writer_id,
        tuple(shifted),
        metadata if metadata is not None else parts[0].metadata,
    )


_LINE_SUFFIX = re.compile(r"-\d+$")


def paragraph_key(stem: str) -> str:
    """IAM-OnDB line files are named ``<form>-<line>``; strip the line number."""
    return _LINE_SUFFIX.sub("", stem)


def write_iam_xml(ss: StrokeSet, time_scale: float = 1000.0) -> bytes:
    root = ET.Element("WhiteboardCaptureSession")
    general = ET.SubElement(root, "General")
    ET.SubElement(general, "Form", id=ss.id, writerID=ss.writer_id)
    sset = ET.SubElement(root, "StrokeSet")
    for s in ss.strokes:
        if not s.pen_down:
            continue
        el = ET.SubElement(sset, "Stroke")
        for x, y, t in s.xyt:
            ET.SubElement(el, "Point", x=repr(float(x)), y=repr(float(y)), time=repr(float(t) / time_scale))
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)
