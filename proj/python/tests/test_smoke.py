import json
import math

import numpy as np
import pytest

import xcg


def test_metrics_match_hand_cases():
    assert xcg.concordance_index([3, 2, 1], [1, 2, 3], [True, True, True]) == 1.0
    assert xcg.auroc([0.5, 0.5, 0.5], [True, False, True]) == 0.5
    value, grad = xcg.cox_loss([0.0, 0.0], [5.0, 10.0], [True, True])
    assert abs(value - math.log(2) / 2) < 1e-12
    assert grad == pytest.approx([-0.25, 0.25])
    with pytest.raises(xcg.XcgError):
        xcg.concordance_index([1, 2], [1, 2], [False, True])


def test_knn_graph():
    cells = [(0, 0.0, 0.0, 0), (1, 1.0, 0.0, 1), (2, 3.0, 0.0, 0)]
    g = xcg.build_knn_graph(cells, k=1, n_phenotypes=2, graph_id="line")
    assert g.n_nodes == 3
    assert sorted(g.edges) == [(0, 1), (1, 2)]
    a = np.asarray(g.adjacency)
    assert (a == a.T).all() and np.trace(a) == 0
    assert np.asarray(g.features).sum(axis=1).tolist() == [1.0, 1.0, 1.0]


def test_cli_train_and_explain(tmp_path):
    data = str(tmp_path / "data")
    code, _, err = xcg.run_cli(["synth", "--out", data, "--patients", "12", "--cells-per-graph", "25", "--seed", "2"])
    assert code == 0, err
    run = str(tmp_path / "cls")
    code, _, err = xcg.run_cli(
        ["train", "--data", data, "--out", run, "--task", "classification", "--folds", "2", "--epochs", "2",
         "--hidden", "8", "--lr-grid", "1e-2", "--no-cache"]
    )
    assert code == 0, err

    model = xcg.load_model(str(tmp_path / "cls" / "models" / "fold0_seed0.json"))
    assert model.task == "classification"
    assert json.loads(model.to_json())["schema_version"] == 1

    cells = xcg.synth_generate(40, 6, 3)
    graph = xcg.build_knn_graph(cells, k=3, n_phenotypes=6)
    out = xcg.explain(model, graph, target="short")
    assert out["target_logit"] == 0
    assert len(out["grid_relevance"]) == 40
    assert np.isfinite(np.asarray(out["node_relevance"])).all()


def test_cli_errors_are_json(tmp_path):
    code, _, err = xcg.run_cli(["ingest", "--data", str(tmp_path / "missing"), "--no-cache"])
    assert code == 1
    assert json.loads(err)["error"]["subcommand"] == "ingest"
