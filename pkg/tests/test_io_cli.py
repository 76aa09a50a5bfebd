"""CSV/schema loading, result persistence, and the command-line interface."""
import json

import numpy as np
import pytest

from rankmm.cli import main
from rankmm.dataio import (
    DataError,
    dataset_digest,
    load_dataset,
    load_results,
    load_schema,
    save_results,
)

SCHEMA = {
    "variables": [
        {"id": "colors", "n_alternatives": 3, "labels": ["red", "green", "blue"]},
        {"id": "fruits", "n_alternatives": 4},
    ]
}

ROWS = [
    "individual_id,variable_id,rank_level,alternative",
    "p2,colors,1,3",
    "p2,colors,2,1",
    "p2,fruits,1,2",
    "p1,colors,1,1",
    "p1,fruits,1,4",
    "p1,fruits,2,1",
    "p1,fruits,3,2",
]


@pytest.fixture
def schema_path(tmp_path):
    p = tmp_path / "schema.json"
    p.write_text(json.dumps(SCHEMA))
    return str(p)


def _write_csv(tmp_path, rows, name="data.csv"):
    p = tmp_path / name
    p.write_text("\n".join(rows) + "\n")
    return str(p)


class TestSchema:
    def test_load(self, schema_path):
        schema = load_schema(schema_path)
        assert [e["id"] for e in schema] == ["colors", "fruits"]
        assert schema[0]["labels"] == ["red", "green", "blue"]
        assert schema[1]["labels"] is None

    @pytest.mark.parametrize(
        "doc",
        [
            "not json {",
            "{}",
            '{"variables": []}',
            '{"variables": [{"id": "a", "n_alternatives": 1}]}',
            '{"variables": [{"id": "a", "n_alternatives": 3}, {"id": "a", "n_alternatives": 2}]}',
            '{"variables": [{"id": "a", "n_alternatives": 3, "labels": ["x"]}]}',
        ],
    )
    def test_rejects(self, tmp_path, doc):
        p = tmp_path / "bad.json"
        p.write_text(doc)
        with pytest.raises(DataError):
            load_schema(str(p))


class TestLoadDataset:
    def test_round_trip(self, tmp_path, schema_path):
        data, report = load_dataset(_write_csv(tmp_path, ROWS), schema_path)
        assert data.T == 2
        assert data.ids == ("p1", "p2")  # id-ordered, not file-ordered
        assert data.ranking(0, 0).entries == (1,)
        assert data.ranking(1, 0).entries == (3, 1)
        assert data.ranking(0, 1).entries == (4, 1, 2)
        assert report["n_dropped_incomplete"] == 0

    def test_row_order_invariance(self, tmp_path, schema_path):
        shuffled = [ROWS[0]] + list(reversed(ROWS[1:]))
        d1, _ = load_dataset(_write_csv(tmp_path, ROWS, "a.csv"), schema_path)
        d2, _ = load_dataset(_write_csv(tmp_path, shuffled, "b.csv"), schema_path)
        assert dataset_digest(d1) == dataset_digest(d2)
        assert d1.ids == d2.ids
        assert all(np.array_equal(a, b) for a, b in zip(d1.rankings, d2.rankings))

    def test_incomplete_individual_dropped_and_counted(self, tmp_path, schema_path):
        rows = ROWS + ["p3,colors,1,2"]  # p3 never ranks fruits
        data, report = load_dataset(_write_csv(tmp_path, rows), schema_path)
        assert data.T == 2
        assert report["n_dropped_incomplete"] == 1
        assert report["dropped_ids"] == ["p3"]

    @pytest.mark.parametrize(
        "extra,fragment",
        [
            (["p1,colors,2,1"], "twice"),  # alternative 1 already ranked
            (["p1,colors,1,2"], "tie"),  # rank level 1 repeated
            (["p1,colors,3,2"], "contiguous"),  # level 3 without level 2
            (["p1,shapes,1,1"], "unknown variable"),
            (["p1,colors,1,9"], "outside"),
            (["p1,colors,0,2"], "rank_level"),
            (["p1,colors,x,2"], "integers"),
            (["p1,colors,1"], "4 columns"),
        ],
    )
    def test_record_errors(self, tmp_path, schema_path, extra, fragment):
        with pytest.raises(DataError) as exc:
            load_dataset(_write_csv(tmp_path, ROWS + extra), schema_path)
        assert fragment in str(exc.value)

    def test_bad_header(self, tmp_path, schema_path):
        rows = ["id,var,level,alt", "p1,colors,1,1"]
        with pytest.raises(DataError, match="header"):
            load_dataset(_write_csv(tmp_path, rows), schema_path)

    def test_empty_file(self, tmp_path, schema_path):
        with pytest.raises(DataError, match="empty"):
            load_dataset(_write_csv(tmp_path, []), schema_path)

    def test_header_only(self, tmp_path, schema_path):
        with pytest.raises(DataError, match="no records"):
            load_dataset(_write_csv(tmp_path, ROWS[:1]), schema_path)


class TestResults:
    def test_round_trip_and_determinism(self, tmp_path):
        doc = {
            "alpha": np.array([0.123456789012345, 1e-9]),
            "nested": {"theta": [np.array([[0.25, 0.75]])]},
            "n": np.int64(7),
            "flag": True,
        }
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_results(doc, p1)
        save_results(doc, p2)
        assert p1.read_bytes() == p2.read_bytes()
        loaded = load_results(p1)
        assert loaded["alpha"] == pytest.approx([0.123456789012, 1e-9], rel=1e-11)
        assert loaded["n"] == 7 and loaded["flag"] is True

    def test_non_finite_floats(self, tmp_path):
        p = tmp_path / "x.json"
        save_results({"a": float("inf"), "b": float("nan")}, p)
        loaded = load_results(p)
        assert loaded == {"a": "inf", "b": None}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> fit pipeline artifacts shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    schema = root / "schema.json"
    schema.write_text(
        json.dumps(
            {
                "variables": [
                    {"id": "colors", "n_alternatives": 6},
                    {"id": "fruits", "n_alternatives": 5},
                    {"id": "shapes", "n_alternatives": 4},
                ]
            }
        )
    )
    truth = root / "truth.json"
    save_results(
        {
            "alpha": [0.08, 0.05],
            "theta": [
                [
                    [0.60, 0.18, 0.10, 0.06, 0.035, 0.025],
                    [0.025, 0.035, 0.06, 0.10, 0.18, 0.60],
                ],
                [[0.62, 0.18, 0.10, 0.06, 0.04], [0.04, 0.06, 0.10, 0.18, 0.62]],
                [[0.65, 0.20, 0.10, 0.05], [0.05, 0.10, 0.20, 0.65]],
            ],
        },
        truth,
    )
    data = root / "data.csv"
    rc = main(
        [
            "simulate", "--params", str(truth), "--schema", str(schema),
            "--t", "80", "--seed", "4", "--out", str(data),
        ]
    )
    assert rc == 0
    fit_out = root / "fit.json"
    rc = main(
        [
            "fit", "--data", str(data), "--schema", str(schema), "--k", "2",
            "--init", "seeded", "--outer-tol", "1e-5", "--max-outer-iters", "60",
            "--seed", "0", "--out", str(fit_out),
        ]
    )
    assert rc == 0
    return {"root": root, "schema": schema, "data": data, "fit": fit_out, "truth": truth}


class TestCli:
    def test_simulate_output_is_loadable(self, pipeline):
        data, _ = load_dataset(pipeline["data"], str(pipeline["schema"]))
        assert data.T == 80
        assert data.variable_ids == ("colors", "fruits", "shapes")
        # full rankings by default
        assert np.all(data.lengths[0] == 6) and np.all(data.lengths[2] == 4)

    def test_fit_document_contents(self, pipeline):
        doc = load_results(pipeline["fit"])
        assert set(doc["params"]) == {"alpha", "theta", "fixed_mask"}
        assert len(doc["params"]["alpha"]) == 2
        assert sum(doc["relative_frequencies"]) == pytest.approx(1.0, rel=1e-9)
        assert doc["manifest"]["command"] == "fit"
        assert doc["manifest"]["dataset_digest"]
        assert doc["manifest"]["convergence"]["converged"] is True
        assert sum(doc["memberships"]["modal_counts"]) == 80
        for block in doc["params"]["theta"]:
            for row in block:
                assert sum(row) == pytest.approx(1.0, rel=1e-9)

    def test_fit_byte_deterministic(self, pipeline, tmp_path):
        out = tmp_path / "fit2.json"
        rc = main(
            [
                "fit", "--data", str(pipeline["data"]), "--schema", str(pipeline["schema"]),
                "--k", "2", "--init", "seeded", "--outer-tol", "1e-5",
                "--max-outer-iters", "60", "--seed", "0", "--out", str(out),
            ]
        )
        assert rc == 0
        assert out.read_bytes() == pipeline["fit"].read_bytes()

    def test_report(self, pipeline, tmp_path):
        out = tmp_path / "report.json"
        rc = main(["report", "--fit", str(pipeline["fit"]), "--out", str(out)])
        assert rc == 0
        doc = load_results(out)
        assert "support_ratios" in doc and "relative_frequencies" in doc
        assert sum(doc["membership_mean"]) == pytest.approx(1.0, rel=1e-9)

    def test_gof_table(self, pipeline, tmp_path):
        out = tmp_path / "gof.csv"
        rc = main(
            [
                "gof", "--data", str(pipeline["data"]), "--schema", str(pipeline["schema"]),
                "--fit", str(pipeline["fit"]), "--s", "5", "--seed", "0", "--out", str(out),
            ]
        )
        assert rc == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "variable,alternative,simulation_index,first_choice_count"
        assert len(lines) == 1 + (6 + 5 + 4) * 6  # header + alternatives x (obs + 5 sims)
        observed = [l for l in lines[1:] if l.split(",")[2] == "0"]
        assert sum(int(l.split(",")[3]) for l in observed) == 3 * 80

    def test_bootstrap_serial_parallel_identical(self, pipeline, tmp_path):
        outs = []
        for jobs, name in ((1, "b1.json"), (2, "b2.json")):
            out = tmp_path / name
            rc = main(
                [
                    "bootstrap", "--data", str(pipeline["data"]), "--schema",
                    str(pipeline["schema"]), "--fit", str(pipeline["fit"]),
                    "--bootstrap-b", "6", "--level", "0.9", "--max-outer-iters", "25",
                    "--outer-tol", "1e-4", "--seed", "1", "--jobs", str(jobs),
                    "--out", str(out),
                ]
            )
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        doc = json.loads(outs[0])
        assert doc["alpha"]["low"] <= doc["alpha"]["high"]

    def test_select_k_smoke(self, pipeline, tmp_path):
        out = tmp_path / "select.json"
        rc = main(
            [
                "select-k", "--data", str(pipeline["data"]), "--schema",
                str(pipeline["schema"]), "--k", "2", "--k-range", "1,2",
                "--restarts", "1", "--outer-tol", "1e-4", "--max-outer-iters", "8",
                "--out", str(out),
            ]
        )
        assert rc == 0
        doc = load_results(out)
        assert doc["best_k"] in (1, 2)
        assert set(doc["held_out_elbo"]) == {"1", "2"}

    def test_missing_file_exits_nonzero(self, tmp_path, capsys):
        rc = main(
            [
                "fit", "--data", str(tmp_path / "missing.csv"), "--schema",
                str(tmp_path / "missing.json"), "--k", "2", "--out", str(tmp_path / "o.json"),
            ]
        )
        assert rc == 1
        assert capsys.readouterr().err.strip()

    def test_malformed_data_exits_nonzero(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("individual_id,variable_id,rank_level,alternative\np1,colors,1,1\np1,colors,1,2\n")
        rc = main(
            [
                "fit", "--data", str(bad), "--schema", str(pipeline["schema"]),
                "--k", "2", "--out", str(tmp_path / "o.json"),
            ]
        )
        assert rc == 1
        assert "tie" in capsys.readouterr().err

    def test_simulate_schema_mismatch(self, pipeline, tmp_path, capsys):
        bad_schema = tmp_path / "bad_schema.json"
        bad_schema.write_text(json.dumps({"variables": [{"id": "x", "n_alternatives": 5}]}))
        rc = main(
            [
                "simulate", "--params", str(pipeline["truth"]), "--schema", str(bad_schema),
                "--t", "5", "--out", str(tmp_path / "s.csv"),
            ]
        )
        assert rc == 1
