"""File formats: observation/geometry/curve CSVs, fit outputs, parameter snapshots.

All text files are UTF-8 with LF line endings. Output CSVs may start with
``#`` provenance lines, which every reader here skips.
"""

import csv
import datetime as _dt
import json
import math
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .basis import BasisSpec
from .curves import AnnualCurve, RawObservation, SiteGeometry
from .errors import ParseError, SpfclustError, ValidationError
from .graph import NeighborGraph
from .model import CovParams, ModelParams
from .mrf import MrfParams

PARAMS_FORMAT = "spfclust-params v1"


def _rows(path, required):
    """Yield (line_number, row dict) skipping comment lines; check header."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        lines = ((n, line) for n, line in enumerate(fh, start=1) if not line.startswith("#"))
        header = None
        for n, line in lines:
            if line.strip():
                header = next(csv.reader([line]))
                break
        if header is None:
            raise ParseError("missing header row", path=path)
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"header lacks column(s) {missing}", line=n, path=path)
        for n, line in lines:
            if not line.strip():
                continue
            fields = next(csv.reader([line]))
            if len(fields) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(fields)}", line=n, path=path)
            yield n, dict(zip(header, (f.strip() for f in fields)))


def _float(text, what, n, path):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not a number", line=n, path=path) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} must be finite", line=n, path=path)
    return value


def read_observations_csv(path, allow_negative: bool = False) -> Iterator[RawObservation]:
    """Stream ``site_id,date,value`` rows; an empty value means missing."""
    for n, row in _rows(path, ("site_id", "date", "value")):
        if not row["site_id"]:
            raise ParseError("empty site_id", line=n, path=path)
        try:
            date = _dt.date.fromisoformat(row["date"])
        except ValueError:
            raise ParseError(f"invalid date {row['date']!r}", line=n, path=path) from None
        if row["value"] == "":
            yield RawObservation(row["site_id"], date, math.nan, missing=True)
            continue
        value = _float(row["value"], "value", n, path)
        if value < 0 and not allow_negative:
            raise ParseError(f"negative value {value}", line=n, path=path)
        yield RawObservation(row["site_id"], date, value, allow_negative=allow_negative)


def write_observations_csv(path, curves: Sequence[AnnualCurve], year: int = 2001, header: str = ""):
    """Write 365-point annual curves as one non-leap year of daily rows."""
    start = _dt.date(year, 1, 1)
    if (_dt.date(year, 12, 31) - start).days != 364:
        raise ValidationError(f"{year} is a leap year")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write("site_id,date,value\n")
        for c in curves:
            if c.values.size != 365:
                raise ValidationError(f"curve {c.site_id!r} does not have 365 daily values")
            for d, v in enumerate(c.values):
                fh.write(f"{c.site_id},{(start + _dt.timedelta(days=d)).isoformat()},{float(v)!r}\n")


def read_geometry_csv(path) -> List[SiteGeometry]:
    out = []
    seen = set()
    for n, row in _rows(path, ("site_id", "lat", "lon", "elev_m")):
        sid = row["site_id"]
        if sid in seen:
            raise ParseError(f"duplicate site_id {sid!r}", line=n, path=path)
        seen.add(sid)
        try:
            out.append(
                SiteGeometry(
                    sid,
                    _float(row["lat"], "lat", n, path),
                    _float(row["lon"], "lon", n, path),
                    _float(row["elev_m"], "elev_m", n, path),
                )
            )
        except ParseError:
            raise
        except ValidationError as exc:
            raise ParseError(str(exc), line=n, path=path) from None
    return out


def write_geometry_csv(path, geometry: Sequence[SiteGeometry], header: str = ""):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write("site_id,lat,lon,elev_m\n")
        for g in geometry:
            fh.write(f"{g.site_id},{g.latitude!r},{g.longitude!r},{g.elevation!r}\n")


def write_curves_csv(path, curves: Sequence[AnnualCurve], header: str = ""):
    """Long format ``site_id,years_used,t,value``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write("site_id,years_used,t,value\n")
        for c in curves:
            for t, v in zip(c.times, c.values):
                fh.write(f"{c.site_id},{c.years_used},{float(t)!r},{float(v)!r}\n")


def read_curves_csv(path) -> List[AnnualCurve]:
    data: Dict[str, list] = {}
    years: Dict[str, int] = {}
    for n, row in _rows(path, ("site_id", "years_used", "t", "value")):
        sid = row["site_id"]
        data.setdefault(sid, []).append(
            (_float(row["t"], "t", n, path), _float(row["value"], "value", n, path))
        )
        try:
            years[sid] = int(row["years_used"])
        except ValueError:
            raise ParseError(f"years_used {row['years_used']!r} is not an integer", line=n, path=path) from None
    curves = []
    for sid in sorted(data):
        pts = sorted(data[sid])
        try:
            curves.append(
                AnnualCurve(sid, np.array([p[0] for p in pts]), np.array([p[1] for p in pts]), years[sid])
            )
        except ValidationError as exc:
            raise ParseError(str(exc), path=path) from None
    return curves


def write_assignments_csv(path, site_ids, labels, posteriors, header: str = ""):
    """``site_id,cluster,posterior_1..C`` with 1-based cluster numbers."""
    C = posteriors.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write("site_id,cluster," + ",".join(f"posterior_{k + 1}" for k in range(C)) + "\n")
        for sid, z, row in zip(site_ids, labels, posteriors):
            fh.write(f"{sid},{int(z) + 1}," + ",".join(repr(float(p)) for p in row) + "\n")


def read_labels_csv(path) -> Dict[str, int]:
    """Read ``site_id,cluster`` (extra columns ignored); clusters stay as written."""
    out = {}
    for n, row in _rows(path, ("site_id", "cluster")):
        if row["site_id"] in out:
            raise ParseError(f"duplicate site_id {row['site_id']!r}", line=n, path=path)
        try:
            out[row["site_id"]] = int(row["cluster"])
        except ValueError:
            raise ParseError(f"cluster {row['cluster']!r} is not an integer", line=n, path=path) from None
    return out


def write_labels_csv(path, site_ids, labels, header: str = ""):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write("site_id,cluster\n")
        for sid, z in zip(site_ids, labels):
            fh.write(f"{sid},{int(z) + 1}\n")


def write_geojson(path, geometry: Sequence[SiteGeometry], labels, posteriors, provenance: Optional[dict] = None):
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [g.longitude, g.latitude]},
            "properties": {
                "site_id": g.site_id,
                "cluster": int(z) + 1,
                "posterior_max": float(np.max(p)),
            },
        }
        for g, z, p in zip(geometry, labels, posteriors)
    ]
    doc = {"type": "FeatureCollection", "features": features}
    if provenance:
        doc["provenance"] = provenance
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=False)
        fh.write("\n")


def write_trace_csv(path, trace: Sequence[float], header: str = ""):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write("iteration,objective\n")
        for i, j in enumerate(trace, start=1):
            fh.write(f"{i},{float(j)!r}\n")


def write_edge_list_csv(path, graph: NeighborGraph, site_ids: Sequence[str], header: str = ""):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header)
        fh.write("site_a,site_b,weight\n")
        for i, j, w in graph.edges():
            fh.write(f"{site_ids[i]},{site_ids[j]},{float(w)!r}\n")


def _matrix_lines(name, M):
    M = np.atleast_2d(M)
    lines = [f"[{name}] {M.shape[0]} {M.shape[1]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in M]
    return lines


def write_params(path, params: ModelParams, header: str = ""):
    """Flat text snapshot: scalar ``key = value`` lines then labelled matrices.

    Matrices are stored in the working (normalized) basis together with
    the transform back to the raw basis.
    """
    b = params.basis
    lines = [f"# {PARAMS_FORMAT}"]
    lines += [l for l in header.splitlines() if l]
    lines += [
        f"clusters = {params.n_clusters}",
        f"q = {params.q}",
        f"sigma2 = {params.cov.sigma2!r}",
        f"theta = {params.mrf.theta!r}",
        f"basis.kind = {b.kind}",
        f"basis.q = {b.q}",
        f"basis.order = {b.order}",
        "basis.knots = " + (",".join(repr(k) for k in b.knots) if b.knots else ""),
    ]
    lines += _matrix_lines("alpha", params.alpha)
    lines += _matrix_lines("gamma", params.cov.gamma)
    lines += _matrix_lines("transform", params.transform)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_params(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != f"# {PARAMS_FORMAT}":
        raise ParseError(f"not a '{PARAMS_FORMAT}' file", line=1, path=path)
    scalars = {}
    mats = {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            name, r, c = line[1:].replace("]", " ").split()
            r, c = int(r), int(c)
            rows = [[float(x) for x in lines[i + j].split()] for j in range(r)]
            i += r
            mats[name] = np.array(rows, dtype=float).reshape(r, c)
            continue
        key, _, value = line.partition("=")
        scalars[key.strip()] = value.strip()
    try:
        knots = scalars.get("basis.knots", "")
        basis = BasisSpec(
            kind=scalars["basis.kind"],
            q=int(scalars["basis.q"]),
            order=int(scalars["basis.order"]),
            knots=tuple(float(k) for k in knots.split(",")) if knots else None,
        )
        C = int(scalars["clusters"])
        return ModelParams(
            alpha=mats["alpha"],
            cov=CovParams(mats["gamma"], float(scalars["sigma2"])),
            mrf=MrfParams(float(scalars["theta"]), C, allow_repulsive=True),
            basis=basis,
            transform=mats["transform"],
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"incomplete parameter snapshot: {exc}", path=path) from None
