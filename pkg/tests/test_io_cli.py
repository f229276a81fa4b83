"""CSV/JSON serialization and the command-line interface."""

import json

import numpy as np
import pytest

from peer import (
    ConfigError,
    ParseError,
    ShapeMismatch,
    fit_penalized,
)
from peer.cli import main
from peer.dataio import (
    load_dataset,
    load_matrix,
    load_vector,
    parse_penalty_arg,
    penalty_from_config,
    read_json,
    save_matrix,
    save_vector,
    spec_from_config,
    write_json,
)
from peer.diagnostics import diagnose


# ---------------------------------------------------------------------------
# matrix and vector files


def test_matrix_round_trip_is_bit_exact(tmp_path, rng):
    A = rng.standard_normal((7, 5)) * np.logspace(-150, 150, 5)
    A[0, 0] = -0.1 + 0.2  # a value with no short decimal representation
    path = tmp_path / "a.csv"
    save_matrix(path, A)
    B = load_matrix(path)
    assert B.shape == A.shape
    assert np.array_equal(A, B)

    v = rng.standard_normal(11)
    save_vector(tmp_path / "v.csv", v)
    assert np.array_equal(load_vector(tmp_path / "v.csv"), v)


def test_load_matrix_skips_a_single_header_line(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("col_a,col_b\n1.5,2\n3,4\n")
    assert np.array_equal(load_matrix(path), [[1.5, 2.0], [3.0, 4.0]])


def test_load_matrix_reports_bad_cells_with_position(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2\n3,4\n5,oops\n")
    with pytest.raises(ParseError) as err:
        load_matrix(path)
    assert err.value.line == 3
    assert err.value.column == 2

    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2\n3,4,5\n")
    with pytest.raises(ParseError) as err:
        load_matrix(ragged)
    assert err.value.line == 2

    empty = tmp_path / "empty.csv"
    empty.write_text("\n")
    with pytest.raises(ParseError):
        load_matrix(empty)


def test_load_vector_rejects_matrices(tmp_path):
    save_matrix(tmp_path / "m.csv", np.ones((3, 2)))
    with pytest.raises(ShapeMismatch):
        load_vector(tmp_path / "m.csv")


def test_load_dataset_centers_and_checks_shapes(tmp_path, rng):
    X = rng.standard_normal((8, 4)) + 3.0
    y = rng.standard_normal(8) - 2.0
    save_matrix(tmp_path / "x.csv", X)
    save_vector(tmp_path / "y.csv", y)

    design, y2 = load_dataset(tmp_path / "x.csv", tmp_path / "y.csv")
    assert not design.centered
    assert np.array_equal(design.values, X)
    assert np.array_equal(y2, y)

    design_c, y_c = load_dataset(tmp_path / "x.csv", tmp_path / "y.csv", center=True)
    assert design_c.centered
    assert np.allclose(design_c.values.mean(axis=0), 0, atol=1e-12)
    assert abs(y_c.mean()) < 1e-12

    save_vector(tmp_path / "short.csv", y[:5])
    with pytest.raises(ShapeMismatch):
        load_dataset(tmp_path / "x.csv", tmp_path / "short.csv")


# ---------------------------------------------------------------------------
# config dictionaries


def test_penalty_config_kinds(tmp_path, rng):
    p = 12
    assert np.array_equal(penalty_from_config({"kind": "identity"}, p).values, np.eye(p))

    D = penalty_from_config({"kind": "derivative", "order": 2, "shift": 0.3}, p)
    base = penalty_from_config({"kind": "derivative", "order": 2}, p)
    assert np.allclose(D.values, base.values + 0.3 * np.eye(p))

    basis = rng.standard_normal((p, 3))
    P = penalty_from_config({"kind": "projection", "basis": basis.tolist(), "a": 2.0, "b": 0.5}, p)
    assert P.values.shape == (p, p)

    # basis can also come from a CSV file on disk
    save_matrix(tmp_path / "basis.csv", basis)
    P2 = penalty_from_config(
        {"kind": "projection", "basis": str(tmp_path / "basis.csv"), "a": 2.0, "b": 0.5}, p
    )
    assert np.allclose(P.values, P2.values)

    tall = rng.standard_normal((p + 6, p))
    C = penalty_from_config({"kind": "custom", "values": tall.tolist()}, p)
    assert C.values.shape[0] <= p
    assert np.allclose(C.values.T @ C.values, tall.T @ tall)

    G = penalty_from_config({"kind": "goutis"}, p)
    assert G.values.shape == (p, p)

    X = rng.standard_normal((8, p))
    S = penalty_from_config({"kind": "stein"}, p, X=X)
    assert np.allclose(S.values.T @ S.values, X.T @ X, atol=1e-10)

    Q = np.linalg.qr(rng.standard_normal((p, 2)))[0]
    M = penalty_from_config(
        {"kind": "multispace", "projectors": [(Q @ Q.T).tolist()], "weights": [2.0]}, p
    )
    assert np.allclose(M.values, 2.0 * Q @ Q.T)


@pytest.mark.parametrize(
    "cfg",
    [
        {"kind": "identity", "order": 2},
        {"kind": "derivative", "span": 3},
        {"kind": "projection"},
        {"kind": "stein"},
        {"kind": "custom"},
        {"kind": "spline"},
        {},
        "derivative",
    ],
)
def test_penalty_config_rejects_bad_descriptors(cfg):
    with pytest.raises(ConfigError):
        penalty_from_config(cfg, 10)


def test_spec_config_defaults_and_strictness():
    spec = spec_from_config({"scenario": "bumps"})
    assert (spec.n, spec.p) == (50, 250)
    assert spec.snr_target == 10.0
    assert spec.r2_target == 0.8
    assert spec.replicates == 100
    spec2 = spec_from_config(
        {"scenario": "cosine", "n": 30, "replicates": 5, "snr_target": None}
    )
    assert (spec2.n, spec2.p) == (30, 100)
    assert spec2.snr_target is None
    with pytest.raises(ConfigError):
        spec_from_config({"scenario": "bumps", "alpha": 1.0})
    with pytest.raises(ConfigError):
        spec_from_config({"scenario": "unknown"})
    with pytest.raises(ConfigError):
        spec_from_config(["bumps"])


def test_json_round_trip_converts_arrays(tmp_path):
    obj = {"v": np.arange(3.0), "s": np.float64(2.5), "k": [np.int64(7)], "t": "x"}
    write_json(tmp_path / "o.json", obj)
    back = read_json(tmp_path / "o.json")
    assert back == {"v": [0.0, 1.0, 2.0], "s": 2.5, "k": [7], "t": "x"}


def test_parse_penalty_arg_inline_and_file(tmp_path):
    assert parse_penalty_arg('{"kind": "identity"}') == {"kind": "identity"}
    path = tmp_path / "pen.json"
    write_json(path, {"kind": "derivative", "order": 1})
    assert parse_penalty_arg(str(path)) == {"kind": "derivative", "order": 1}
    with pytest.raises(ConfigError):
        parse_penalty_arg('{"kind": ')


# ---------------------------------------------------------------------------
# command-line interface


def _write_dataset(tmp_path, rng, n=10, p=16):
    X = rng.standard_normal((n, p))
    beta = rng.standard_normal(p)
    y = X @ beta + 0.1 * rng.standard_normal(n)
    save_matrix(tmp_path / "x.csv", X)
    save_vector(tmp_path / "y.csv", y)
    return X, y


def test_cli_fit_matches_the_library(tmp_path, rng, capsys):
    X, y = _write_dataset(tmp_path, rng)
    out = tmp_path / "fit.json"
    code = main([
        "fit", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
        "--penalty", '{"kind": "identity"}', "--alpha", "0.5", "--out", str(out),
    ])
    assert code == 0
    assert "fit:" in capsys.readouterr().out
    result = read_json(out)
    expect = fit_penalized(X, np.eye(X.shape[1]), y, 0.5)
    assert np.allclose(result["beta"], expect.beta, atol=1e-10)
    assert result["method"] == "gsvd"
    assert np.allclose(result["fitted"], X @ expect.beta, atol=1e-10)


def test_cli_gsvd_reports_reconstruction(tmp_path, rng, capsys):
    X = rng.standard_normal((8, 20))
    from peer import derivative_penalty

    save_matrix(tmp_path / "x.csv", X)
    save_matrix(tmp_path / "l.csv", derivative_penalty(20, 2).values)
    out = tmp_path / "fac"
    assert main(["gsvd", "--x", str(tmp_path / "x.csv"),
                 "--l", str(tmp_path / "l.csv"), "--out", str(out)]) == 0
    capsys.readouterr()
    report = read_json(out / "report.json")
    assert report["reconstruction_x"] <= 1e-10
    assert report["reconstruction_l"] <= 1e-10
    assert report["sigma_mu_identity_err"] <= 1e-12
    U = load_matrix(out / "U.csv")
    assert np.allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-10)
    W = load_matrix(out / "W.csv")
    Wt = load_matrix(out / "Wtilde.csv")
    assert np.allclose(W @ Wt.T, np.eye(20), atol=1e-8)


def test_cli_diagnose_matches_direct_call(tmp_path, rng, capsys):
    n, p = 12, 20
    X = rng.standard_normal((n, p))
    beta = rng.standard_normal(p)
    save_matrix(tmp_path / "x.csv", X)
    save_vector(tmp_path / "beta.csv", beta)
    out = tmp_path / "diag.json"
    assert main([
        "diagnose", "--x", str(tmp_path / "x.csv"),
        "--penalty", '{"kind": "derivative", "order": 2}',
        "--alpha", "1.5", "--beta-true", str(tmp_path / "beta.csv"),
        "--sigma-eps", "0.5", "--out", str(out),
    ]) == 0
    capsys.readouterr()
    report = read_json(out)
    from peer import derivative_penalty

    d = diagnose(X, derivative_penalty(p, 2), 1.5, beta, 0.5)
    assert np.isclose(report["mse"], d.mse_theoretical)
    assert np.isclose(report["bias_norm"], np.linalg.norm(d.bias))
    assert len(report["per_component"]) == n
    filt = [c["filter"] for c in report["per_component"]]
    assert all(0 <= f <= 1 for f in filt)


def test_cli_tune_reml_and_grid(tmp_path, rng, capsys):
    n, p = 50, 12
    X = rng.standard_normal((n, p)) / np.sqrt(p)
    beta = rng.standard_normal(p)
    y = X @ beta + 0.3 * rng.standard_normal(n)
    save_matrix(tmp_path / "x.csv", X)
    save_vector(tmp_path / "y.csv", y)

    out = tmp_path / "tune.json"
    assert main([
        "tune", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
        "--method", "reml", "--penalty", '{"kind": "identity"}', "--out", str(out),
    ]) == 0
    res = read_json(out)
    assert res["method"] == "reml"
    assert np.isfinite(res["alpha_hat"]) and res["alpha_hat"] > 0

    save_matrix(tmp_path / "prior.csv", rng.standard_normal((p, 2)))
    out2 = tmp_path / "tune2.json"
    assert main([
        "tune", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
        "--method", "grid", "--prior", str(tmp_path / "prior.csv"),
        "--grid", "0.1,1,10", "--const", "1.0", "--out", str(out2),
    ]) == 0
    capsys.readouterr()
    res2 = read_json(out2)
    assert res2["method"] == "grid"
    assert any(np.isclose(res2["a_hat"], g) for g in (0.1, 1.0, 10.0))
    assert np.isclose(res2["a_hat"] * res2["b_hat"], 1.0)
    assert len(res2["criterion_trace"]) == 3


def test_cli_simulate_is_deterministic_and_reportable(tmp_path, capsys, monkeypatch):
    spec = {
        "scenario": "bumps", "n": 24, "p": 40, "replicates": 2,
        "master_seed": 9, "methods": ["ridge", "pcr"], "test_size": 12,
    }
    spec_path = tmp_path / "spec.json"
    write_json(spec_path, spec)
    spec_bytes = spec_path.read_bytes()

    monkeypatch.setenv("PEER_THREADS", "1")
    assert main(["simulate", "--spec", str(spec_path), "--out", str(tmp_path / "r1")]) == 0
    monkeypatch.setenv("PEER_THREADS", "4")
    assert main(["simulate", "--spec", str(spec_path), "--out", str(tmp_path / "r2"),
                 "--workers", "4"]) == 0
    assert spec_path.read_bytes() == spec_bytes
    for name in ("results.csv", "summary.csv", "partial_sums.csv"):
        b1 = (tmp_path / "r1" / name).read_bytes()
        assert b1 == (tmp_path / "r2" / name).read_bytes()
        assert b1  # non-empty

    assert main(["report", "--results", str(tmp_path / "r1" / "results.csv"),
                 "--out", str(tmp_path / "report.csv")]) == 0
    out_text = capsys.readouterr().out
    assert "ridge" in out_text and "pcr" in out_text
    import csv as _csv

    with open(tmp_path / "report.csv", newline="") as fh:
        report_rows = list(_csv.DictReader(fh))
    assert {r["method"] for r in report_rows} == {"ridge", "pcr"}
    with open(tmp_path / "r1" / "summary.csv", newline="") as fh:
        summary_rows = {r["method"]: r for r in _csv.DictReader(fh)}
    for r in report_rows:
        s = summary_rows[r["method"]]
        assert np.isclose(float(r["mse_median"]), float(s["mse_median"]))
        assert np.isclose(float(r["pe_median_x1000"]), 1e3 * float(s["pe_median"]))


def test_cli_exit_codes(tmp_path, rng, capsys):
    # usage errors come back as 2
    assert main([]) == 2
    assert main(["fit", "--x", "x.csv"]) == 2
    assert main(["unknown-command"]) == 2
    capsys.readouterr()

    # computation and file errors come back as 1 with a JSON record
    assert main(["fit", "--x", str(tmp_path / "missing.csv"),
                 "--y", str(tmp_path / "missing2.csv"),
                 "--penalty", '{"kind": "identity"}']) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "FileNotFoundError"

    # a shared null space between design and penalty is a computation error
    X = np.zeros((3, 6))
    X[:, :4] = rng.standard_normal((3, 4))
    L = np.diag([1.0, 1.0, 1.0, 1.0, 0.0, 0.0])
    save_matrix(tmp_path / "x0.csv", X)
    save_matrix(tmp_path / "l0.csv", L)
    assert main(["gsvd", "--x", str(tmp_path / "x0.csv"),
                 "--l", str(tmp_path / "l0.csv"), "--out", str(tmp_path / "f")]) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "RankDeficient"
    assert record["message"]


def test_cli_does_not_mutate_inputs(tmp_path, rng, capsys):
    X, y = _write_dataset(tmp_path, rng)
    x_bytes = (tmp_path / "x.csv").read_bytes()
    y_bytes = (tmp_path / "y.csv").read_bytes()
    # centering drops the row rank below n, so the factored path is out of
    # its window by contract; the direct solve handles centered designs
    assert main([
        "fit", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
        "--penalty", '{"kind": "identity"}', "--center", "--path", "direct",
        "--out", str(tmp_path / "fit.json"),
    ]) == 0
    capsys.readouterr()
    assert (tmp_path / "x.csv").read_bytes() == x_bytes
    assert (tmp_path / "y.csv").read_bytes() == y_bytes
