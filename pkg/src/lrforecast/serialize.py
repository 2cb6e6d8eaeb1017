"""File formats: series CSV, model/trend/state-space JSON, sweep CSV.

CSV: first line is a header; an optional leading column named `t` holds a
consecutive integer time index; remaining columns are series components.
Values are written with 17 significant digits so a write/read round trip
is exact for doubles.  JSON documents are dumped with sorted keys and a
fixed indent so identical inputs produce bytewise-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .baselines import StateSpaceModel
from .core import TimeSeries
from .evaluation import SWEEP_CSV_COLUMNS, SweepRow
from .features import FeatureSpec, TrendModel
from .objective import Loss
from .solver import LowRankForecaster
from .simgen import SimSpec


def _fmt(x: float) -> str:
    return "%.17g" % x


def dump_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- series CSV


def write_series_csv(path: str, series: TimeSeries, include_t: bool = True) -> None:
    names = series.column_names()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((["t"] + list(names)) if include_t else list(names))
        for i, row in enumerate(series.values):
            cells = [_fmt(v) for v in row]
            if include_t:
                cells = [str(series.t0 + i)] + cells
            w.writerow(cells)


def read_series_csv(path: str) -> TimeSeries:
    """Parses a series CSV, validating field counts and the t index.

    Malformed rows raise ValueError naming the offending line number.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if not header or any(not c for c in header):
        raise ValueError(f"{path}: line 1: blank column name in header")
    has_t = header[0] == "t"
    names = header[1:] if has_t else header
    if not names:
        raise ValueError(f"{path}: header has no value columns")
    values = []
    t0 = 1
    prev_t = None
    for k, row in enumerate(rows[1:]):
        line = k + 2
        if len(row) != len(header):
            raise ValueError(
                f"{path}: line {line}: expected {len(header)} fields, got {len(row)}"
            )
        cells = [c.strip() for c in row]
        if has_t:
            try:
                t = int(cells[0])
            except ValueError:
                raise ValueError(
                    f"{path}: line {line}: t index {cells[0]!r} is not an integer"
                ) from None
            if prev_t is None:
                t0 = t
            elif t != prev_t + 1:
                raise ValueError(
                    f"{path}: line {line}: t index {t} is not consecutive "
                    f"(previous was {prev_t})"
                )
            prev_t = t
            cells = cells[1:]
        try:
            values.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise ValueError(
                f"{path}: line {line}: value {bad!r} is not a number"
            ) from None
    if not values:
        raise ValueError(f"{path}: no data rows")
    return TimeSeries(np.array(values, dtype=float), names=tuple(names), t0=t0)


def _is_float(c: str) -> bool:
    try:
        float(c)
        return True
    except ValueError:
        return False


def write_matrix_csv(
    path: str, values: np.ndarray, names: list[str], t_index: np.ndarray | None = None
) -> None:
    """Generic tidy CSV for forecasts / latent series / true states."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if len(names) != values.shape[1]:
        raise ValueError("one name per column required")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        if t_index is not None:
            w.writerow(["t"] + list(names))
            for t, row in zip(t_index, values):
                w.writerow([str(int(t))] + [_fmt(v) for v in row])
        else:
            w.writerow(list(names))
            for row in values:
                w.writerow([_fmt(v) for v in row])


# ----------------------------------------------------------------- model JSON


@dataclass
class ModelBundle:
    """A forecaster plus optional trend / auxiliary-feature attachments."""

    model: LowRankForecaster
    trend: TrendModel | None = None
    phi: np.ndarray | None = None
    aux_features: FeatureSpec | None = None


def model_to_json(
    model: LowRankForecaster,
    trend: TrendModel | None = None,
    phi: np.ndarray | None = None,
    aux_features: FeatureSpec | None = None,
) -> dict:
    doc = {
        "n": model.n,
        "M": model.M,
        "H": model.H,
        "rank": model.rank,
        "lambda": model.lam,
        "kappa": model.kappa,
        "loss": model.loss.to_json(),
        "means": model.means.tolist(),
        "U": model.U.tolist(),
        "V": model.V.tolist(),
        "singular_values": model.singular_values.tolist(),
    }
    if trend is not None:
        doc["trend"] = trend_to_json(trend)
    if phi is not None:
        doc["aux"] = {
            "Phi": np.asarray(phi, dtype=float).tolist(),
            "features": aux_features.to_json() if aux_features else None,
        }
    return doc


def model_from_json(doc: dict) -> ModelBundle:
    required = (
        "n", "M", "H", "rank", "lambda", "kappa", "loss", "means",
        "U", "V", "singular_values",
    )
    missing = [k for k in required if k not in doc]
    if missing:
        raise ValueError(f"model document missing fields: {', '.join(missing)}")
    n, M, H, rank = (int(doc[k]) for k in ("n", "M", "H", "rank"))
    lam, kappa = float(doc["lambda"]), float(doc["kappa"])
    if min(n, M, H) < 1 or rank < 0 or lam < 0 or kappa < 0:
        raise ValueError("model document has out-of-range scalar fields")
    if rank == 0:
        U = np.zeros((M * n, 0))
        V = np.zeros((0, H * n))
    else:
        U = np.array(doc["U"], dtype=float)
        V = np.array(doc["V"], dtype=float)
    sigma = np.array(doc["singular_values"], dtype=float)
    means = np.array(doc["means"], dtype=float)
    if U.shape != (M * n, rank) or V.shape != (rank, H * n):
        raise ValueError(
            f"factor shapes {U.shape} x {V.shape} do not match "
            f"(Mn={M * n}, rank={rank}, Hn={H * n})"
        )
    if sigma.shape != (rank,) or means.shape != (n,):
        raise ValueError("singular_values/means have wrong lengths")
    model = LowRankForecaster(
        U=U, V=V, singular_values=sigma, n=n, M=M, H=H,
        lam=lam, kappa=kappa, loss=Loss.from_json(doc["loss"]), means=means,
    )
    trend = trend_from_json(doc["trend"]) if doc.get("trend") else None
    phi = None
    aux_features = None
    if doc.get("aux"):
        phi = np.array(doc["aux"]["Phi"], dtype=float)
        if phi.ndim != 2 or phi.shape[1] != H * n:
            raise ValueError(f"aux Phi has shape {phi.shape}, want p x {H * n}")
        if doc["aux"].get("features"):
            aux_features = FeatureSpec.from_json(doc["aux"]["features"])
    return ModelBundle(model=model, trend=trend, phi=phi, aux_features=aux_features)


def save_model_json(path: str, model: LowRankForecaster, **extras) -> None:
    dump_json(path, model_to_json(model, **extras))


def load_model_json(path: str) -> ModelBundle:
    return model_from_json(load_json(path))


# ------------------------------------------------------------ other documents


def trend_to_json(trend: TrendModel) -> dict:
    return {
        "S": trend.S.tolist(),
        "lam": trend.lam,
        "features": trend.features.to_json() if trend.features else None,
    }


def trend_from_json(doc: dict) -> TrendModel:
    S = np.array(doc["S"], dtype=float)
    if S.ndim != 2:
        raise ValueError("trend S must be a matrix")
    feats = FeatureSpec.from_json(doc["features"]) if doc.get("features") else None
    return TrendModel(S=S, lam=float(doc.get("lam", 0.0)), features=feats)


def ss_to_json(model: StateSpaceModel, spec: SimSpec | None = None) -> dict:
    doc = {
        "A": model.A.tolist(),
        "C": model.C.tolist(),
        "Q": model.Q.tolist(),
        "R": model.R.tolist(),
    }
    if spec is not None:
        doc["spec"] = spec.to_json()
    return doc


def ss_from_json(doc: dict) -> StateSpaceModel:
    try:
        mats = [np.array(doc[k], dtype=float) for k in ("A", "C", "Q", "R")]
    except KeyError as e:
        raise ValueError(f"state-space document missing field {e.args[0]!r}") from None
    return StateSpaceModel(*mats)


# ------------------------------------------------------------------ sweep CSV


def write_sweep_csv(path: str, rows: list[SweepRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_CSV_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    _fmt(r.alpha),
                    _fmt(r.kappa),
                    _fmt(r.lam),
                    str(r.rank),
                    _fmt(r.train_loss),
                    _fmt(r.test_loss),
                    _fmt(r.train_inconsistency),
                    _fmt(r.test_inconsistency),
                    _fmt(r.wall_time_s),
                ]
            )


def read_sweep_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != list(SWEEP_CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected sweep header {header}")
        out = []
        for row in reader:
            rec = dict(zip(header, (float(c) for c in row)))
            rec["rank"] = int(rec["rank"])
            out.append(rec)
    return out
