"""File round trips and schema validation for the CSV/JSON artifacts."""
import numpy as np
import pytest

from bpcr.dataset import (
    chain_header,
    chain_summary,
    fmt_float,
    load_chain_csv,
    load_dataset_csv,
    load_json,
    load_model_json,
    load_predictions_csv,
    write_chain_csv,
    write_csv,
    write_json,
    write_model_json,
    write_predictions_csv,
    write_synthetic_csv,
    write_truth_json,
)
from bpcr.errors import SchemaError
from bpcr.model import Chain, McmcConfig, SpatialParams
from bpcr.pca import compute_basis, standardize
from bpcr.predictor import PredictionResult, TrainData
from bpcr.synthetic import SyntheticConfig, generate_dataset


@pytest.fixture(scope="module")
def synthetic():
    return generate_dataset(SyntheticConfig(grid_side=5, n_corr=3, n_noise=2, beta_reg=(1.0, 2.0), seed=7))


def test_fmt_float_round_trips_exactly():
    for value in (0.1, 1.0 / 3.0, -1e-17, 123456.789, 5e-324):
        assert float(fmt_float(value)) == value


def test_write_csv_blank_and_int_cells(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b"], [[None, np.int64(4)], [1.5, "x"]])
    assert path.read_text() == "a,b\n,4\n1.5,x\n"


def test_synthetic_csv_round_trip(tmp_path, synthetic):
    path = tmp_path / "dataset.csv"
    write_synthetic_csv(path, synthetic)
    data = load_dataset_csv(path)
    assert data.n == 25
    assert list(data.ids) == list(range(25))
    assert data.predictor_labels == tuple(f"z_{j + 1}" for j in range(5))
    np.testing.assert_array_equal(data.coords, synthetic.coords)
    np.testing.assert_array_equal(data.y, synthetic.y)
    np.testing.assert_array_equal(data.z, synthetic.z)


def test_dataset_without_response(tmp_path):
    path = tmp_path / "new.csv"
    write_csv(path, ["id", "s_x", "s_y", "temp"], [[0, 0.0, 1.0, 2.5]])
    data = load_dataset_csv(path, require_y=False)
    assert data.y is None
    assert data.predictor_labels == ("temp",)


def test_dataset_string_ids_survive(tmp_path):
    path = tmp_path / "named.csv"
    write_csv(path, ["id", "s_x", "s_y", "y", "z_1"], [["stn-a", 0, 0, 1, 2], ["stn-b", 1, 0, 3, 4]])
    data = load_dataset_csv(path)
    assert list(data.ids) == ["stn-a", "stn-b"]


@pytest.mark.parametrize(
    "header,row,fragment",
    [
        (["s_x", "s_y", "y", "z_1"], ["0", "0", "1", "2"], "need one of"),
        (["id", "s_y", "y", "z_1"], ["0", "0", "1", "2"], "missing required column"),
        (["id", "s_x", "s_y", "y"], ["0", "0", "0", "1"], "no predictor columns"),
        (["id", "s_x", "s_x", "y", "z_1"], ["0", "0", "0", "1", "2"], "duplicate column"),
        (["id", "s_x", "s_y", "z_1"], ["0", "0", "0", "2"], "missing required column"),
    ],
)
def test_dataset_header_errors(tmp_path, header, row, fragment):
    path = tmp_path / "bad.csv"
    write_csv(path, header, [row])
    with pytest.raises(SchemaError, match=fragment):
        load_dataset_csv(path)


def test_dataset_cell_errors_carry_position(tmp_path):
    path = tmp_path / "bad.csv"
    write_csv(path, ["id", "s_x", "s_y", "y", "z_1"], [["0", "0", "0", "1", "2"], ["1", "0", "oops", "1", "2"]])
    with pytest.raises(SchemaError) as info:
        load_dataset_csv(path)
    assert info.value.row == 1
    assert info.value.column == "s_y"

    write_csv(path, ["id", "s_x", "s_y", "y", "z_1"], [["0", "0", "0", "1"]])
    with pytest.raises(SchemaError, match="expected 5 fields"):
        load_dataset_csv(path)


def test_empty_dataset_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(SchemaError, match="empty"):
        load_dataset_csv(path)


def test_truth_json_contents(tmp_path, synthetic):
    path = tmp_path / "truth.json"
    write_truth_json(path, synthetic)
    raw = load_json(path)
    assert raw["seed"] == 7
    assert raw["theta_true"] == {"tau2": 0.25, "sigma2": 1.0, "phi": 0.5}
    np.testing.assert_array_equal(np.asarray(raw["beta_true"]), synthetic.beta_true)


def _small_chain(n=40, p=3, burn_in=10) -> Chain:
    rng = np.random.default_rng(2)
    return Chain(
        beta=rng.standard_normal((n, p)),
        alpha=rng.gamma(2.0, size=(n, 2)),
        theta=rng.gamma(2.0, size=(n, 3)),
        accepted=(rng.random(n) < 0.4).astype(np.uint8),
        burn_in=burn_in,
        config=McmcConfig(n_samples=n, burn_in=burn_in),
        seed=0,
    )


def test_chain_csv_round_trip(tmp_path):
    chain = _small_chain()
    path = tmp_path / "chain.csv"
    write_chain_csv(path, chain)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(chain_header(3))
    assert len(lines) == 1 + 30
    assert lines[1].split(",")[0] == "10"

    back = load_chain_csv(path)
    assert back.burn_in == 0
    tail = chain.post_burn_in()
    np.testing.assert_array_equal(back.beta, tail.beta)
    np.testing.assert_array_equal(back.alpha, tail.alpha)
    np.testing.assert_array_equal(back.theta, tail.theta)
    np.testing.assert_array_equal(back.accepted, tail.accepted)


def test_chain_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "chain.csv"
    write_csv(path, ["iter", "beta_0", "alpha0", "alpha1", "tau2", "sigma2", "accepted"], [])
    with pytest.raises(SchemaError, match="unexpected chain header"):
        load_chain_csv(path)

    write_csv(path, chain_header(2), [])
    with pytest.raises(SchemaError, match="no states"):
        load_chain_csv(path)


def test_chain_summary_matches_quantiles():
    chain = _small_chain()
    summary = chain_summary(chain)
    tail = chain.post_burn_in()
    entry = summary["parameters"]["beta_1"]
    assert entry["mean"] == pytest.approx(tail.beta[:, 1].mean())
    assert entry["q025"] == pytest.approx(np.quantile(tail.beta[:, 1], 0.025))
    assert entry["q975"] == pytest.approx(np.quantile(tail.beta[:, 1], 0.975))
    assert entry["ess"] >= 1.0
    assert summary["n_samples"] == 40
    assert summary["burn_in"] == 10
    assert summary["acceptance_rate"] == pytest.approx(tail.accepted.mean())
    assert set(summary["parameters"]) == {
        "beta_0", "beta_1", "beta_2", "alpha0", "alpha1", "tau2", "sigma2", "phi",
    }


def _results(n):
    rng = np.random.default_rng(5)
    out = []
    for i in range(n):
        samples = rng.standard_normal(30)
        out.append(
            PredictionResult(
                location_id=i,
                samples=samples,
                mean=float(samples.mean()),
                median=float(np.median(samples)),
                ci_low=float(np.quantile(samples, 0.025)),
                ci_high=float(np.quantile(samples, 0.975)),
                level=0.95,
            )
        )
    return out


def test_predictions_csv_round_trip(tmp_path):
    results = _results(4)
    coords = np.arange(8.0).reshape(4, 2)
    y_true = np.array([0.5, -1.0, 2.0, 0.0])
    path = tmp_path / "pred.csv"
    write_predictions_csv(path, results, coords, y_true=y_true)
    back = load_predictions_csv(path)
    assert back["location_id"] == ["0", "1", "2", "3"]
    np.testing.assert_array_equal(back["coords"], coords)
    np.testing.assert_array_equal(back["y_true"], y_true)
    np.testing.assert_array_equal(back["mean"], [r.mean for r in results])
    np.testing.assert_array_equal(back["ci_high"], [r.ci_high for r in results])
    np.testing.assert_array_equal(back["level"], [0.95] * 4)


def test_predictions_csv_optional_truth_and_ids(tmp_path):
    results = _results(2)
    path = tmp_path / "pred.csv"
    write_predictions_csv(path, results, [[0, 0], [1, 1]], ids=["a", "b"])
    back = load_predictions_csv(path)
    assert back["y_true"] is None
    assert back["location_id"] == ["a", "b"]

    with pytest.raises(SchemaError, match="results vs"):
        write_predictions_csv(path, results, [[0, 0]])


def test_model_json_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    raw = rng.standard_normal((12, 4))
    std, scaling = standardize(raw)
    basis = compute_basis(std)
    train = TrainData(x=rng.standard_normal((12, 3)), y=rng.standard_normal(12), coords=rng.random((12, 2)))
    path = tmp_path / "model.json"
    write_model_json(path, kind="bpcr_spatial", k=2, scaling=scaling, basis=basis, train=train, backend="numpy")
    back = load_model_json(path)
    assert back["kind"] == "bpcr_spatial"
    assert back["k"] == 2
    assert back["backend"] == "numpy"
    np.testing.assert_array_equal(back["scaling"].means, scaling.means)
    np.testing.assert_array_equal(back["scaling"].sds, scaling.sds)
    np.testing.assert_array_equal(back["basis"].v, basis.v)
    np.testing.assert_array_equal(back["basis"].singular_values, basis.singular_values)
    assert back["basis"].rel_tol == basis.rel_tol
    np.testing.assert_array_equal(back["train"].x, train.x)
    np.testing.assert_array_equal(back["train"].y, train.y)
    np.testing.assert_array_equal(back["train"].coords, train.coords)


def test_model_json_missing_key(tmp_path):
    path = tmp_path / "model.json"
    write_json(path, {"kind": "bpcr"})
    with pytest.raises(SchemaError, match="missing key"):
        load_model_json(path)


def test_write_json_is_deterministic(tmp_path):
    payload = {"b": np.float64(0.1), "a": [np.int32(1), 2], "c": np.arange(3)}
    first = tmp_path / "a.json"
    second = tmp_path / "b.json"
    write_json(first, payload)
    write_json(second, payload)
    assert first.read_bytes() == second.read_bytes()
    assert load_json(first) == {"a": [1, 2], "b": 0.1, "c": [0, 1, 2]}
