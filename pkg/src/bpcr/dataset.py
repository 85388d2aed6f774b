"""File artifacts: dataset, chain, prediction, and benchmark CSV/JSON.

Floats go out with 17 significant digits so a read-back reproduces the exact
values; every writer is atomic (temp file in the target directory + rename).
Readers raise SchemaError with row/column context.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .errors import SchemaError
from .model import Chain, McmcConfig, effective_sample_size
from .pca import PCABasis, ScalingParams
from .predictor import PredictionResult, TrainData
from .synthetic import SyntheticDataset

# non-predictor columns a dataset file may carry, in any order
RESERVED_COLUMNS = ("id", "cell_id", "location_id", "s_x", "s_y", "y", "y_true", "eta_plus_eps")
ID_COLUMNS = ("id", "cell_id", "location_id")

CHAIN_FIXED_COLUMNS = ("alpha0", "alpha1", "tau2", "sigma2", "phi", "accepted")


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    return str(value)


def atomic_write_text(path, text: str) -> None:
    """Write-then-rename so readers never see a partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Tabular datasets
# ---------------------------------------------------------------------------


class Dataset:
    """In-memory view of a dataset file: ids, coords, optional response, and the
    predictor block in file column order."""

    def __init__(self, ids, coords, y, z, predictor_labels):
        self.ids = ids
        self.coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        self.y = None if y is None else np.asarray(y, dtype=np.float64).ravel()
        z = np.asarray(z, dtype=np.float64)
        self.z = z if z.ndim == 2 else z.reshape(self.coords.shape[0], -1)
        self.predictor_labels = tuple(predictor_labels)

    @property
    def n(self) -> int:
        return self.coords.shape[0]


def write_synthetic_csv(path, data: SyntheticDataset) -> None:
    p = data.z.shape[1]
    header = ["cell_id", "s_x", "s_y", "y", "eta_plus_eps"] + [f"z_{j + 1}" for j in range(p)]
    rows = (
        [i, data.coords[i, 0], data.coords[i, 1], data.y[i], data.eta_plus_eps[i], *data.z[i]]
        for i in range(data.coords.shape[0])
    )
    write_csv(path, header, rows)


def write_truth_json(path, data: SyntheticDataset) -> None:
    write_json(
        path,
        {
            "beta_true": data.beta_true.tolist(),
            "theta_true": {
                "tau2": data.theta_true.tau2,
                "sigma2": data.theta_true.sigma2,
                "phi": data.theta_true.phi,
            },
            "seed": data.config.seed,
        },
    )


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"not a number: {text!r}", row=row, column=column) from None


def load_dataset_csv(path, *, require_y: bool = True) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        raw_rows = [r for r in reader if r]
    if len(set(header)) != len(header):
        raise SchemaError(f"duplicate column names in header {header}")
    col = {name: i for i, name in enumerate(header)}
    id_name = next((c for c in ID_COLUMNS if c in col), None)
    if id_name is None:
        raise SchemaError(f"need one of {ID_COLUMNS}", column="id")
    for need in ("s_x", "s_y"):
        if need not in col:
            raise SchemaError("missing required column", column=need)
    if require_y and "y" not in col:
        raise SchemaError("missing required column", column="y")
    labels = [c for c in header if c not in RESERVED_COLUMNS]
    if not labels:
        raise SchemaError("no predictor columns found (every column is reserved)")

    n = len(raw_rows)
    ids: list = []
    coords = np.empty((n, 2))
    y = np.empty(n) if "y" in col else None
    z = np.empty((n, len(labels)))
    for i, raw in enumerate(raw_rows):
        if len(raw) != len(header):
            raise SchemaError(f"expected {len(header)} fields, found {len(raw)}", row=i)
        ids.append(raw[col[id_name]])
        coords[i, 0] = _parse_float(raw[col["s_x"]], i, "s_x")
        coords[i, 1] = _parse_float(raw[col["s_y"]], i, "s_y")
        if y is not None:
            y[i] = _parse_float(raw[col["y"]], i, "y")
        for j, lab in enumerate(labels):
            z[i, j] = _parse_float(raw[col[lab]], i, lab)
    try:
        ids = np.array([int(v) for v in ids])
    except ValueError:
        ids = np.array(ids, dtype=object)
    return Dataset(ids=ids, coords=coords, y=y, z=z, predictor_labels=labels)


# ---------------------------------------------------------------------------
# Chains and posterior summaries
# ---------------------------------------------------------------------------


def chain_header(p_coef: int) -> list[str]:
    return ["iter"] + [f"beta_{j}" for j in range(p_coef)] + list(CHAIN_FIXED_COLUMNS)


def write_chain_csv(path, chain: Chain) -> None:
    """Post-burn-in states only; iter is the absolute sampler iteration."""
    tail = chain.post_burn_in()
    rows = (
        [chain.burn_in + i, *tail.beta[i], tail.alpha[i, 0], tail.alpha[i, 1],
         tail.theta[i, 0], tail.theta[i, 1], tail.theta[i, 2], int(tail.accepted[i])]
        for i in range(len(tail))
    )
    write_csv(path, chain_header(chain.p_coef), rows)


def load_chain_csv(path) -> Chain:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        raw_rows = [r for r in reader if r]
    p_coef = sum(1 for c in header if c.startswith("beta_"))
    if p_coef == 0 or header != chain_header(p_coef):
        raise SchemaError(f"unexpected chain header {header}")
    if not raw_rows:
        raise SchemaError("chain file holds no states")
    n = len(raw_rows)
    beta = np.empty((n, p_coef))
    alpha = np.empty((n, 2))
    theta = np.empty((n, 3))
    accepted = np.empty(n, dtype=np.uint8)
    for i, raw in enumerate(raw_rows):
        if len(raw) != len(header):
            raise SchemaError(f"expected {len(header)} fields, found {len(raw)}", row=i)
        vals = [_parse_float(v, i, header[j]) for j, v in enumerate(raw)]
        beta[i] = vals[1 : 1 + p_coef]
        alpha[i] = vals[1 + p_coef : 3 + p_coef]
        theta[i] = vals[3 + p_coef : 6 + p_coef]
        accepted[i] = int(vals[-1])
    config = McmcConfig(n_samples=n, burn_in=0)
    return Chain(beta=beta, alpha=alpha, theta=theta, accepted=accepted, burn_in=0, config=config, seed=0)


def chain_summary(chain: Chain) -> dict:
    """Posterior table: mean, median, central 95% bounds, and effective sample
    size per parameter, from post-burn-in states."""
    tail = chain.post_burn_in()
    params = {}
    for name in chain.parameter_names():
        v = tail.parameter(name)
        params[name] = {
            "mean": float(v.mean()),
            "median": float(np.median(v)),
            "q025": float(np.quantile(v, 0.025)),
            "q975": float(np.quantile(v, 0.975)),
            "ess": float(effective_sample_size(chain, name)),
        }
    return {
        "parameters": params,
        "acceptance_rate": tail.accept_rate,
        "n_samples": len(chain),
        "burn_in": chain.burn_in,
    }


# ---------------------------------------------------------------------------
# Predictions
# ---------------------------------------------------------------------------


def write_predictions_csv(path, results, coords, *, ids=None, y_true=None) -> None:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    results = list(results)
    if len(results) != coords.shape[0]:
        raise SchemaError(f"{len(results)} results vs {coords.shape[0]} locations")
    header = ["location_id", "s_x", "s_y"]
    if y_true is not None:
        header.append("y_true")
    header += ["y_pred_mean", "y_pred_median", "ci_low", "ci_high", "level"]

    def rows():
        for i, r in enumerate(results):
            rid = r.location_id if ids is None else ids[i]
            row = [rid, coords[i, 0], coords[i, 1]]
            if y_true is not None:
                row.append(y_true[i])
            row += [r.mean, r.median, r.ci_low, r.ci_high, r.level]
            yield row

    write_csv(path, header, rows())


def load_predictions_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        raw_rows = [r for r in reader if r]
    col = {name: i for i, name in enumerate(header)}
    for need in ("location_id", "s_x", "s_y", "y_pred_mean", "y_pred_median", "ci_low", "ci_high", "level"):
        if need not in col:
            raise SchemaError("missing required column", column=need)
    n = len(raw_rows)
    out = {
        "location_id": [],
        "coords": np.empty((n, 2)),
        "y_true": np.empty(n) if "y_true" in col else None,
        "mean": np.empty(n),
        "median": np.empty(n),
        "ci_low": np.empty(n),
        "ci_high": np.empty(n),
        "level": np.empty(n),
    }
    for i, raw in enumerate(raw_rows):
        if len(raw) != len(header):
            raise SchemaError(f"expected {len(header)} fields, found {len(raw)}", row=i)
        out["location_id"].append(raw[col["location_id"]])
        out["coords"][i, 0] = _parse_float(raw[col["s_x"]], i, "s_x")
        out["coords"][i, 1] = _parse_float(raw[col["s_y"]], i, "s_y")
        if out["y_true"] is not None:
            out["y_true"][i] = _parse_float(raw[col["y_true"]], i, "y_true")
        for key, name in (("mean", "y_pred_mean"), ("median", "y_pred_median"),
                          ("ci_low", "ci_low"), ("ci_high", "ci_high"), ("level", "level")):
            out[key][i] = _parse_float(raw[col[name]], i, name)
    return out


# ---------------------------------------------------------------------------
# Fitted-model snapshot (everything prediction needs besides the chain)
# ---------------------------------------------------------------------------


def write_model_json(path, *, kind, k, scaling: ScalingParams, basis: PCABasis,
                     train: TrainData, backend: str) -> None:
    write_json(
        path,
        {
            "kind": kind,
            "k": int(k),
            "backend": backend,
            "scaling": {"means": scaling.means.tolist(), "sds": scaling.sds.tolist()},
            "basis": {
                "v": basis.v.tolist(),
                "singular_values": basis.singular_values.tolist(),
                "rel_tol": basis.rel_tol,
            },
            "train": {
                "x": train.x.tolist(),
                "y": train.y.tolist(),
                "coords": train.coords.tolist(),
            },
        },
    )


def load_model_json(path) -> dict:
    raw = load_json(path)
    try:
        return {
            "kind": raw["kind"],
            "k": int(raw["k"]),
            "backend": raw.get("backend"),
            "scaling": ScalingParams(
                means=np.asarray(raw["scaling"]["means"], dtype=np.float64),
                sds=np.asarray(raw["scaling"]["sds"], dtype=np.float64),
            ),
            "basis": PCABasis(
                v=np.asarray(raw["basis"]["v"], dtype=np.float64),
                singular_values=np.asarray(raw["basis"]["singular_values"], dtype=np.float64),
                rel_tol=float(raw["basis"]["rel_tol"]),
            ),
            "train": TrainData(
                x=np.asarray(raw["train"]["x"], dtype=np.float64),
                y=np.asarray(raw["train"]["y"], dtype=np.float64),
                coords=np.asarray(raw["train"]["coords"], dtype=np.float64),
            ),
        }
    except KeyError as exc:
        raise SchemaError(f"model snapshot is missing key {exc}") from None


# ---------------------------------------------------------------------------
# Benchmark artifacts
# ---------------------------------------------------------------------------

BENCHMARK_COLUMNS = (
    "model", "n_train", "replicate", "bias_pct", "rmse_pct", "q2",
    "ci_length_mean", "coverage_pct", "wall_time_s", "n_eval", "n_skipped",
)


def write_benchmark_csv(path, rows) -> None:
    def encode(row):
        d = row.to_dict()
        return [d[c] for c in BENCHMARK_COLUMNS]

    write_csv(path, list(BENCHMARK_COLUMNS), (encode(r) for r in rows))


def write_plot_data_csv(path, aggregate) -> None:
    """Long format for external figure tools: one row per (model, n, metric)."""
    header = ["model", "n_train", "metric", "mean", "sd"]

    def rows():
        for entry in aggregate:
            for metric in ("bias_pct", "rmse_pct", "q2", "ci_length_mean", "coverage_pct"):
                mean = entry.get(f"{metric}_mean")
                if mean is None:
                    continue
                yield [entry["model"], entry["n_train"], metric, mean, entry.get(f"{metric}_sd")]

    write_csv(path, header, rows())
