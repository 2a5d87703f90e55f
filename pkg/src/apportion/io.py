"""CSV formats for dictionaries, source labels and samples.

Wide dictionary:   ``feature_id,<profile_id>,...`` one row per feature.
Long-form EEMs:    ``profile_id,excitation_nm,emission_nm,intensity``.
Labels:            ``profile_id,source`` or ``profile_id,<category>,...``
                   (one weight column per category).
Sample (wide):     ``feature_id,intensity``.
Sample (long):     ``excitation_nm,emission_nm,intensity``.

Missing intensities are empty cells. The text ``NaN`` (or any non-finite
number) is rejected so the observed mask is never ambiguous. EEM feature ids
are ``"<excitation>:<emission>"``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import Dictionary, Profile, SourceDesign, build_design

LONG_DICT_HEADER = ("profile_id", "excitation_nm", "emission_nm", "intensity")
LONG_SAMPLE_HEADER = ("excitation_nm", "emission_nm", "intensity")


def format_eem_feature(excitation: float, emission: float) -> str:
    return f"{float(excitation):g}:{float(emission):g}"


def parse_eem_feature(fid: str) -> tuple[float, float]:
    try:
        ex, em = fid.split(":")
        return float(ex), float(em)
    except ValueError:
        raise ValidationError(
            f"feature id {fid!r} is not an '<excitation>:<emission>' pair") from None


def fmt(x: float) -> str:
    """Shortest-safe decimal text: 17 significant digits round-trip exactly."""
    return format(float(x), ".17g")


def _number(text: str, where: str, allow_missing: bool = False) -> float:
    text = text.strip()
    if text == "":
        if allow_missing:
            return math.nan
        raise ValidationError(f"{where}: empty cell")
    try:
        val = float(text)
    except ValueError:
        raise ValidationError(f"{where}: non-numeric value {text!r}") from None
    if not math.isfinite(val):
        raise ValidationError(
            f"{where}: {text!r} is not allowed; leave the cell empty for a missing value")
    return val


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ValidationError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ValidationError(
                f"{path.name} line {i}: expected {len(header)} cells, found {len(r)}")
    return header, rows[1:]


def _unique(ids, what, path):
    seen = set()
    for i in ids:
        if i in seen:
            raise ValidationError(f"{Path(path).name}: duplicate {what} {i!r}")
        seen.add(i)


def read_wide_dictionary(path) -> Dictionary:
    header, rows = _read_rows(path)
    if header[0] != "feature_id" or len(header) < 2:
        raise ValidationError(f"{Path(path).name}: header must be 'feature_id,<profile_id>...'")
    pids = header[1:]
    _unique(pids, "profile id", path)
    fids = [r[0].strip() for r in rows]
    _unique(fids, "feature id", path)
    name = Path(path).name
    vals = np.array([[_number(c, f"{name} row {fid!r} column {pid!r}")
                      for c, pid in zip(r[1:], pids)] for r, fid in zip(rows, fids)])
    return Dictionary(vals.reshape(len(fids), len(pids)), tuple(fids), tuple(pids))


def read_long_dictionary(path) -> Dictionary:
    """Assemble a dictionary from long-form EEM records.

    Features missing in any profile (absent or empty) are dropped from all of
    them; the rest are ordered by ascending excitation, then emission.
    """
    header, rows = _read_rows(path)
    if tuple(header) != LONG_DICT_HEADER:
        raise ValidationError(f"{Path(path).name}: header must be {','.join(LONG_DICT_HEADER)}")
    name = Path(path).name
    cells: dict[str, dict[tuple[float, float], float]] = {}
    order: list[str] = []
    for i, (pid, ex, em, val) in enumerate(rows, start=2):
        pid = pid.strip()
        key = (_number(ex, f"{name} line {i} excitation"), _number(em, f"{name} line {i} emission"))
        rec = cells.setdefault(pid, {})
        if pid not in order:
            order.append(pid)
        if key in rec:
            raise ValidationError(f"{name} line {i}: duplicate cell {key} for profile {pid!r}")
        rec[key] = _number(val, f"{name} line {i} intensity", allow_missing=True)
    keys = sorted(set().union(*(set(r) for r in cells.values())))
    support = [k for k in keys
               if all(k in cells[p] and not math.isnan(cells[p][k]) for p in order)]
    vals = np.array([[cells[p][k] for p in order] for k in support]).reshape(len(support), len(order))
    fids = tuple(format_eem_feature(*k) for k in support)
    return Dictionary(vals, fids, tuple(order))


def read_dictionary(path) -> Dictionary:
    header, _ = _read_rows(path)
    if tuple(header) == LONG_DICT_HEADER:
        return read_long_dictionary(path)
    return read_wide_dictionary(path)


def read_labels(path) -> tuple[list[str], SourceDesign]:
    header, rows = _read_rows(path)
    name = Path(path).name
    if header[0] != "profile_id" or len(header) < 2:
        raise ValidationError(f"{name}: header must start with 'profile_id'")
    pids = [r[0].strip() for r in rows]
    _unique(pids, "profile id", path)
    if header[1:] == ["source"]:
        labels = [r[1].strip() for r in rows]
        for pid, lab in zip(pids, labels):
            if not lab:
                raise ValidationError(f"{name}: profile {pid!r} has no source label")
        # category order: first appearance
        cats = list(dict.fromkeys(labels))
        return pids, build_design(labels, cats)
    cats = header[1:]
    w = [[_number(c, f"{name} profile {pid!r} column {cat!r}") for c, cat in zip(r[1:], cats)]
         for r, pid in zip(rows, pids)]
    return pids, build_design(w, cats)


def load_dictionary(path_matrix, path_labels) -> tuple[Dictionary, SourceDesign]:
    """Read a dictionary and its labels; columns follow the label-file order."""
    d = read_dictionary(path_matrix)
    pids, design = read_labels(path_labels)
    have = set(d.profile_ids)
    for pid in pids:
        if pid not in have:
            raise ValidationError(f"profile {pid!r} is in the labels but not in the dictionary")
    labelled = set(pids)
    for pid in d.profile_ids:
        if pid not in labelled:
            raise ValidationError(f"profile {pid!r} has no entry in the labels file")
    pos = {pid: j for j, pid in enumerate(d.profile_ids)}
    return d.select_profiles([pos[pid] for pid in pids]), design


def read_sample(path, feature_ids) -> Profile:
    """Read a sample and align it to ``feature_ids`` by id.

    Dictionary features absent from the file, or with an empty cell, are
    unobserved. In long-form files, cells outside the dictionary support are
    dropped; in wide files an unknown feature id is an error.
    """
    header, rows = _read_rows(path)
    name = Path(path).name
    index = {f: i for i, f in enumerate(feature_ids)}
    values = np.full(len(feature_ids), np.nan)
    seen = set()
    if tuple(header) == LONG_SAMPLE_HEADER:
        for i, (ex, em, val) in enumerate(rows, start=2):
            fid = format_eem_feature(_number(ex, f"{name} line {i} excitation"),
                                     _number(em, f"{name} line {i} emission"))
            if fid in seen:
                raise ValidationError(f"{name} line {i}: duplicate cell {fid}")
            seen.add(fid)
            if fid in index:
                values[index[fid]] = _number(val, f"{name} line {i} intensity", allow_missing=True)
    elif header[:2] == ["feature_id", "intensity"] and len(header) == 2:
        for r in rows:
            fid = r[0].strip()
            if fid in seen:
                raise ValidationError(f"{name}: duplicate feature id {fid!r}")
            seen.add(fid)
            if fid not in index:
                raise ValidationError(f"{name}: feature {fid!r} is not in the dictionary")
            values[index[fid]] = _number(r[1], f"{name} feature {fid!r}", allow_missing=True)
    else:
        raise ValidationError(
            f"{name}: header must be 'feature_id,intensity' or 'excitation_nm,emission_nm,intensity'")
    observed = ~np.isnan(values)
    return Profile(np.where(observed, values, 0.0), tuple(feature_ids), observed)


def read_feature_list(path) -> list[str]:
    """Feature ids, one per line; an optional 'feature_id' header is skipped."""
    header, rows = _read_rows(path)
    ids = [header[0]] + [r[0].strip() for r in rows]
    return ids[1:] if ids[0] == "feature_id" else ids


def write_dictionary(path, dictionary: Dictionary) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", *dictionary.profile_ids])
        for fid, row in zip(dictionary.feature_ids, dictionary.values):
            w.writerow([fid, *(fmt(v) for v in row)])


def write_labels(path, design: SourceDesign, profile_ids) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if design.is_indicator():
            w.writerow(["profile_id", "source"])
            for pid, lab in zip(profile_ids, design.labels()):
                w.writerow([pid, lab])
        else:
            w.writerow(["profile_id", *design.category_names])
            for pid, row in zip(profile_ids, design.weights):
                w.writerow([pid, *(fmt(v) for v in row)])


def write_profile(path, profile: Profile) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "intensity"])
        for fid, v, o in zip(profile.feature_ids, profile.values, profile.observed):
            w.writerow([fid, fmt(v) if o else ""])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
