"""Long-format CSV ingestion, canonical CSV/JSON emission and atomic writes.

Input layout, one row per (id, decision_point), sorted by id then
decision_point with no gaps::

    id, decision_point, available, treatment, rand_prob, sub_outcome,
    mod_<name>..., ctl_<name>...

``sub_outcome`` on the row for decision point ``d`` is the event indicator for
the interval between ``d - 1`` and ``d``; the value on an individual's first
row is carried along but never enters a proximal outcome.  Each individual
ends with exactly ``delta`` follow-up rows (``available = treatment = 0``,
``rand_prob`` 0 or empty) that only supply sub-outcomes, so an individual with
``k`` rows has ``k - delta`` decision points.  Feature values on follow-up rows
are ignored.  An intercept is prepended to both feature sets.
"""
import csv
import io as _stdio
import json
import logging
import math
import os
import tempfile
import warnings

import numpy as np

from .core import MrtDataset
from .errors import ConfigError, DataError, StructuralError

log = logging.getLogger(__name__)

REQUIRED = ("id", "decision_point", "available", "treatment", "rand_prob", "sub_outcome")
MOD_PREFIX = "mod_"
CTL_PREFIX = "ctl_"
TRANSFORMS = ("identity", "centering", "day-index")
MAX_DIAGNOSTICS = 20


class IngestWarning(UserWarning):
    pass


def fmt(x):
    """Canonical number text: integers stay integral, reals get 17 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".17g")


def _parse_binary(text, line, column, diags):
    try:
        v = float(text)
    except ValueError:
        diags.append(f"line {line}: {column}={text!r} is not a number")
        return 0.0
    if v not in (0.0, 1.0):
        diags.append(f"line {line}: {column}={text!r} must be 0 or 1")
        return 0.0
    return v


def _parse_real(text, line, column, diags, allow_empty=False):
    if text.strip() == "" and allow_empty:
        return 0.0
    try:
        v = float(text)
    except ValueError:
        diags.append(f"line {line}: {column}={text!r} is not a number")
        return 0.0
    if not math.isfinite(v):
        diags.append(f"line {line}: {column}={text!r} is not finite")
    return v


def _raise_diags(diags, cls=DataError):
    if diags:
        extra = f" (+{len(diags) - MAX_DIAGNOSTICS} more)" if len(diags) > MAX_DIAGNOSTICS else ""
        raise cls("; ".join(diags[:MAX_DIAGNOSTICS]) + extra)


def _select(available, wanted, kind):
    if wanted is None:
        return list(available)
    missing = [w for w in wanted if w not in available]
    if missing:
        raise ConfigError(f"{kind} columns not in file: {missing}")
    return list(wanted)


def ingest_csv(path, delta, moderators=None, controls=None, transforms=None):
    """Read a long-format CSV into an :class:`MrtDataset`.

    ``moderators`` / ``controls`` are feature names without their prefix
    (default: every ``mod_*`` / ``ctl_*`` column).  ``transforms`` maps a
    feature name to ``identity``, ``centering`` or ``day-index``; a
    ``day-index`` feature is the 0-based position of the decision point within
    the individual and need not exist in the file.
    """
    delta = int(delta)
    if delta < 1:
        raise ConfigError("delta must be a positive integer")
    transforms = dict(transforms or {})
    for name, tr in transforms.items():
        if tr not in TRANSFORMS:
            raise ConfigError(f"unknown transform {tr!r} for {name!r}; choose from {TRANSFORMS}")
    day_features = {k for k, v in transforms.items() if v == "day-index"}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise StructuralError(f"{path} is empty") from None
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise StructuralError(f"missing required columns: {missing}")
        if len(set(header)) != len(header):
            raise StructuralError("duplicate column names in header")
        col = {h: j for j, h in enumerate(header)}
        mod_avail = [h[len(MOD_PREFIX):] for h in header if h.startswith(MOD_PREFIX)]
        ctl_avail = [h[len(CTL_PREFIX):] for h in header if h.startswith(CTL_PREFIX)]
        mod_names = _select(mod_avail + sorted(day_features - set(mod_avail)), moderators, "moderator")
        ctl_names = _select(ctl_avail + sorted(day_features - set(ctl_avail)), controls, "control")

        diags = []
        people = []     # (id, first line, rows)
        current = None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                diags.append(f"line {line}: expected {len(header)} fields, found {len(row)}")
                continue
            pid = row[col["id"]].strip()
            try:
                dp = int(row[col["decision_point"]])
            except ValueError:
                diags.append(f"line {line}: decision_point={row[col['decision_point']]!r} "
                             "is not an integer")
                continue
            if current is None or pid != current[0]:
                if any(p[0] == pid for p in people):
                    diags.append(f"line {line}: rows for id {pid!r} are not contiguous")
                    continue
                current = (pid, line, [])
                people.append(current)
            elif dp != current[2][-1][1] + 1:
                diags.append(f"line {line}: id {pid!r} decision_point {dp} does not follow "
                             f"{current[2][-1][1]} (gap or unsorted)")
            current[2].append((line, dp, row))
        _raise_diags(diags, StructuralError)
        if not people:
            raise StructuralError(f"{path} has no data rows")

    short = [p[0] for p in people if len(p[2]) <= delta]
    if short:
        raise StructuralError(
            f"individual(s) {short[:10]} lack decision points plus {delta} follow-up "
            "sub_outcome rows")
    n = len(people)
    lengths = np.array([len(p[2]) - delta for p in people], dtype=np.int64)
    T = int(lengths.max())
    avail = np.zeros((n, T))
    treat = np.zeros((n, T))
    prob = np.zeros((n, T))
    sub = np.zeros((n, T + delta))
    structural = []
    mods = np.zeros((n, T, len(mod_names)))
    ctls = np.zeros((n, T, len(ctl_names)))
    for i, (pid, _, rows) in enumerate(people):
        Ti = lengths[i]
        for r, (line, dp, row) in enumerate(rows):
            sub[i, r] = _parse_binary(row[col["sub_outcome"]], line, "sub_outcome", diags)
            if r >= Ti:
                a = _parse_binary(row[col["available"]], line, "available", diags)
                t = _parse_binary(row[col["treatment"]], line, "treatment", diags)
                pr = _parse_real(row[col["rand_prob"]], line, "rand_prob", diags, allow_empty=True)
                if a or t or pr:
                    structural.append(f"line {line}: follow-up row {r - Ti + 1} of {delta} for id "
                                 f"{pid!r} must have available=0, treatment=0, rand_prob 0 or empty")
                continue
            avail[i, r] = _parse_binary(row[col["available"]], line, "available", diags)
            treat[i, r] = _parse_binary(row[col["treatment"]], line, "treatment", diags)
            prob[i, r] = _parse_real(row[col["rand_prob"]], line, "rand_prob", diags,
                                     allow_empty=avail[i, r] == 0)
            if avail[i, r] == 0 and treat[i, r] == 1:
                diags.append(f"line {line}: treatment=1 while available=0")
            if avail[i, r] == 1 and not 0 < prob[i, r] < 1:
                diags.append(f"line {line}: rand_prob={prob[i, r]} must lie in (0, 1) when available")
            if avail[i, r] == 0 and prob[i, r] != 0:
                diags.append(f"line {line}: rand_prob must be 0 or empty when available=0")
            for feats, names, prefix in ((mods, mod_names, MOD_PREFIX), (ctls, ctl_names, CTL_PREFIX)):
                for j, name in enumerate(names):
                    if transforms.get(name) == "day-index":
                        feats[i, r, j] = r
                    else:
                        feats[i, r, j] = _parse_real(row[col[prefix + name]], line,
                                                     prefix + name, diags)
    if structural:
        structural.insert(0, f"expected {delta} follow-up rows at the end of each individual")
    _raise_diags(structural, StructuralError)
    _raise_diags(diags)

    inside = np.arange(T)[None, :] < lengths[:, None]
    for feats, names in ((mods, mod_names), (ctls, ctl_names)):
        for j, name in enumerate(names):
            if transforms.get(name) == "centering":
                feats[..., j][inside] -= feats[..., j][inside].mean()
    on = avail == 1
    if on.any() and np.ptp(prob[on]) == 0:
        warnings.warn(f"rand_prob is constant ({prob[on][0]:g}); a Constant numerator "
                      "policy reproduces the stabilized weights exactly", IngestWarning, stacklevel=2)
    one = inside[..., None].astype(np.float64)
    moderators_t = np.concatenate([one, mods], axis=2)
    controls_t = np.concatenate([one, ctls], axis=2)
    return MrtDataset(
        delta=delta, availability=avail, treatment=treat, rand_prob=prob, sub_outcome=sub,
        moderators=moderators_t, controls=controls_t, lengths=lengths,
        moderator_names=("intercept",) + tuple(mod_names),
        control_names=("intercept",) + tuple(ctl_names),
        ids=tuple(p[0] for p in people))


def dataset_rows(data):
    """Canonical long-format rows (header first) for ``data``."""
    mod_names = list(data.moderator_names[1:])
    ctl_names = list(data.control_names[1:])
    if data.control_names[0] != "intercept" or not np.all(data.controls[..., 0][data.inside()] == 1):
        raise DataError("canonical layout needs an intercept as the first control column")
    header = list(REQUIRED) + [MOD_PREFIX + m for m in mod_names] + [CTL_PREFIX + c for c in ctl_names]
    rows = [header]
    for i in range(data.n):
        Ti = int(data.lengths[i])
        for r in range(Ti + data.delta):
            if r < Ti:
                vals = [data.availability[i, r], data.treatment[i, r], data.rand_prob[i, r],
                        data.sub_outcome[i, r]]
                feats = list(data.moderators[i, r, 1:]) + list(data.controls[i, r, 1:])
            else:
                vals = [0, 0, 0, data.sub_outcome[i, r]]
                feats = [0] * (len(mod_names) + len(ctl_names))
            rows.append([str(data.ids[i]), str(r + 1)] + [fmt(v) for v in vals + feats])
    return rows


def write_dataset_csv(data, path):
    atomic_write_csv(path, dataset_rows(data))


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_csv(path, rows):
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def records_to_rows(records, columns):
    return [list(columns)] + [[r[c] if isinstance(r.get(c), str) else fmt(r.get(c))
                               for c in columns] for r in records]


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def to_json(obj):
    # repr of a Python float is the shortest text that round-trips exactly
    return json.dumps(obj, indent=2, default=_json_default, allow_nan=True) + "\n"


def atomic_write_json(path, obj):
    atomic_write_text(path, to_json(obj))
