"""End-to-end orchestration: instance prep, runs, persistence, CLI."""
from __future__ import annotations

import json
import os

import pytest

from adgame.cli import main
from adgame.config import ExperimentConfig
from adgame.defense import ExactFitness, load_population
from adgame.graph import EmptyGameError, load_graph, save_graph
from adgame.kernel import condense
from adgame.pipeline import (
    PipelineError,
    ReportCompatibilityError,
    RunRecord,
    prepare_instance,
    report,
    run_baseline,
    run_dir_for,
    run_nndp_edo,
)
from adgame.valuenet import load_checkpoint

from instances import build_game

TINY = dict(
    n_computers=30,
    entry_pool_size=6,
    entry_count=3,
    budget=2,
    mu=8,
    iterations=40,
    rounds=2,
    depth=2,
    width=16,
    batch_size=8,
    epochs_per_round=10,
    mc_runs=2000,
    seeds=(0,),
)


def tiny_config(out_dir: str, **extra) -> ExperimentConfig:
    return ExperimentConfig(**{**TINY, "out_dir": out_dir, **extra})


@pytest.fixture(scope="module")
def graph_file(tmp_path_factory) -> str:
    cfg = tiny_config(str(tmp_path_factory.mktemp("gen")))
    path = os.path.join(cfg.out_dir, "graph.txt")
    assert main(["generate", "--seed", "0", "--out", cfg.out_dir] + _sets(cfg)) == 0
    return path


def _sets(cfg: ExperimentConfig) -> list[str]:
    pairs = []
    for key in TINY:
        value = getattr(cfg, key)
        if key == "seeds":
            value = ",".join(str(s) for s in value)
        pairs += ["--set", f"{key}={value}"]
    return pairs


def test_prepare_instance_is_deterministic(tmp_path):
    cfg = tiny_config(str(tmp_path))
    a = prepare_instance(cfg, 0)
    b = prepare_instance(cfg, 0)
    c = prepare_instance(cfg, 1)
    assert a.instance_key == b.instance_key
    assert a.graph.edges == b.graph.edges
    assert a.instance_key != c.instance_key


def test_prepare_instance_drops_stranded_entry(tmp_path):
    g = build_game(
        [
            ("e0", "m", 0.1, 0.2, True),
            ("m", "da", 0.1, 0.2, False),
            ("e1", "e0", 0.1, 0.2, False),
        ],
        entries={"e0", "e1"},
        prepare=False,
    )
    path = tmp_path / "g.txt"
    save_graph(g, str(path))
    cfg = tiny_config(str(tmp_path), graph_file=str(path))
    with pytest.warns(RuntimeWarning, match="e1"):
        inst = prepare_instance(cfg, 0)
    assert inst.dropped_entries == ("e1",)
    assert inst.graph.entry_nodes == frozenset({"e0"})


def test_prepare_instance_with_no_live_entry_raises(tmp_path):
    g = build_game(
        [
            ("e0", "e1", 0.1, 0.2, False),
            ("e1", "e0", 0.1, 0.2, False),
            ("m", "da", 0.1, 0.2, True),
        ],
        entries={"e0", "e1"},
        prepare=False,
    )
    path = tmp_path / "g.txt"
    save_graph(g, str(path))
    cfg = tiny_config(str(tmp_path), graph_file=str(path))
    with pytest.warns(RuntimeWarning):
        with pytest.raises(EmptyGameError):
            prepare_instance(cfg, 0)


def test_graph_file_without_entries_is_refused(tmp_path):
    g = build_game([("m", "da", 0.1, 0.2, True)], entries={"m"}, prepare=False)
    bare = type(g)(nodes=g.nodes, edges=g.edges, entry_nodes=frozenset())
    path = tmp_path / "bare.txt"
    save_graph(bare, str(path))
    cfg = tiny_config(str(tmp_path), graph_file=str(path))
    with pytest.raises(PipelineError):
        prepare_instance(cfg, 0)


def test_run_record_json_round_trip():
    record = RunRecord(
        strategy="nndp-edo",
        seed=3,
        config={"budget": 2},
        instance_key="abc",
        dropped_entries=("u9",),
        n_nsps=4,
        n_bw_edges=3,
        round_best_fitness=(0.5, 0.25),
        loss_curves=((0.1, 0.05), (0.04,)),
        training_flag=False,
        best_plan=(1, 0, 1),
        best_fitness=0.25,
        exact_value=None,
        simulation={"plan_id": "plan-101", "success_rate": 0.2},
    )
    assert RunRecord.from_json(record.to_json()) == record


def _artifact_bytes(run_dir: str) -> dict[str, bytes]:
    out = {}
    for name in ("record.json", "population.txt", "net.ckpt", "graph.txt"):
        p = os.path.join(run_dir, name)
        if os.path.exists(p):
            with open(p, "rb") as fh:
                out[name] = fh.read()
    return out


def test_run_nndp_edo_persists_and_reruns_bit_identical(tmp_path, graph_file):
    cfg = tiny_config(str(tmp_path), graph_file=graph_file)
    rec1 = run_nndp_edo(cfg, 0)
    run_dir = run_dir_for(cfg, "nndp-edo", 0)
    first = _artifact_bytes(run_dir)
    assert set(first) == {"record.json", "population.txt", "net.ckpt", "graph.txt"}
    rec2 = run_nndp_edo(cfg, 0)
    assert rec1 == rec2
    assert _artifact_bytes(run_dir) == first

    pop = load_population(os.path.join(run_dir, "population.txt"))
    assert 1 <= len(pop) <= cfg.mu
    assert all(sum(m.bits) == cfg.budget for m in pop)
    net, round_index = load_checkpoint(os.path.join(run_dir, "net.ckpt"))
    assert round_index == cfg.rounds
    assert len(rec1.loss_curves) == cfg.rounds + 1
    assert len(rec1.round_best_fitness) == cfg.rounds
    assert rec1.simulation["runs"] == cfg.mc_runs
    inst = prepare_instance(cfg, 0)
    assert net.n_inputs == inst.cg.n_nsps
    assert rec1.exact_value == pytest.approx(
        ExactFitness(inst.cg)(rec1.best_plan), abs=1e-12
    )


def test_rounds_zero_is_an_untrained_baseline(tmp_path, graph_file):
    cfg = tiny_config(str(tmp_path), graph_file=graph_file, rounds=0)
    rec = run_nndp_edo(cfg, 0)
    assert rec.round_best_fitness == ()
    assert rec.loss_curves == ()
    assert not rec.training_flag
    assert sum(rec.best_plan) == cfg.budget
    pop = load_population(
        os.path.join(run_dir_for(cfg, "nndp-edo", 0), "population.txt")
    )
    assert len(pop) == cfg.mu


def test_vec_baseline_uses_training_loop(tmp_path, graph_file):
    cfg = tiny_config(str(tmp_path), graph_file=graph_file)
    rec = run_baseline(cfg, "vec", 0)
    assert rec.strategy == "nndp-vec"
    assert len(rec.loss_curves) == cfg.rounds + 1
    assert os.path.exists(
        os.path.join(run_dir_for(cfg, "nndp-vec", 0), "net.ckpt")
    )


def test_exact_baselines_record_exact_values(tmp_path, graph_file):
    cfg = tiny_config(str(tmp_path), graph_file=graph_file)
    greedy = run_baseline(cfg, "greedy", 0)
    exhaustive = run_baseline(cfg, "exhaustive", 0)
    for rec in (greedy, exhaustive):
        assert rec.round_best_fitness == ()
        assert rec.exact_value == rec.best_fitness
        assert rec.simulation["evaluator"] == "exact-dp"
    assert exhaustive.best_fitness <= greedy.best_fitness + 1e-12
    with pytest.raises(PipelineError):
        run_baseline(cfg, "simulated-annealing", 0)


def test_report_tabulates_and_refuses_mixed_runs(tmp_path, graph_file):
    cfg = tiny_config(str(tmp_path), graph_file=graph_file)
    run_nndp_edo(cfg, 0)
    run_baseline(cfg, "greedy", 0)
    dirs = [run_dir_for(cfg, s, 0) for s in ("nndp-edo", "greedy")]
    table = report(dirs)
    lines = table.strip().splitlines()
    assert lines[0].startswith("strategy,distribution,seeds,mean_success_rate")
    assert len(lines) == 3
    assert {row.split(",")[0] for row in lines[1:]} == {"greedy", "nndp-edo"}

    with pytest.raises(PipelineError):
        report([])
    with pytest.raises(PipelineError):
        report([str(tmp_path / "nowhere")])

    record_path = os.path.join(dirs[1], "record.json")
    raw = json.loads(open(record_path).read())
    raw["config"]["budget"] = 99
    with open(record_path, "w") as fh:
        json.dump(raw, fh)
    with pytest.raises(ReportCompatibilityError):
        report(dirs)


def test_cli_generate_is_deterministic(tmp_path, capsys):
    cfg = tiny_config(str(tmp_path / "a"))
    assert main(["generate", "--seed", "0", "--out", cfg.out_dir] + _sets(cfg)) == 0
    payload = json.loads(capsys.readouterr().out)
    g = load_graph(payload["graph"])
    assert payload["nodes"] == len(g.nodes)
    assert g.entry_nodes

    cfg2 = tiny_config(str(tmp_path / "b"))
    assert main(["generate", "--seed", "0", "--out", cfg2.out_dir] + _sets(cfg2)) == 0
    capsys.readouterr()
    first = open(os.path.join(cfg.out_dir, "graph.txt"), "rb").read()
    second = open(os.path.join(cfg2.out_dir, "graph.txt"), "rb").read()
    assert first == second


def test_cli_kernelize_and_solve_exact_agree(tmp_path, capsys, graph_file):
    out = str(tmp_path / "k")
    args = ["--set", f"graph_file={graph_file}", "--seed", "0", "--out", out]
    assert main(["kernelize"] + args) == 0
    info = json.loads(capsys.readouterr().out)
    pruned = load_graph(os.path.join(out, "pruned.txt"))
    cg = condense(pruned)
    assert info["nsps"] == cg.n_nsps
    assert info["bw_edges"] == len(cg.bw_edges)

    assert main(["solve-exact"] + args) == 0
    solved = json.loads(capsys.readouterr().out)
    zeros = (0,) * len(cg.bw_edges)
    assert solved["value"] == pytest.approx(ExactFitness(cg)(zeros), abs=1e-12)
    assert solved["instance_key"] == info["instance_key"]

    plan = "1" + "0" * (len(cg.bw_edges) - 1)
    assert main(["solve-exact", "--plan", plan] + args) == 0
    solved_one = json.loads(capsys.readouterr().out)
    want = ExactFitness(cg)(tuple(int(c) for c in plan))
    assert solved_one["value"] == pytest.approx(want, abs=1e-12)


def test_cli_defend_train_simulate_report(tmp_path, capsys, graph_file):
    out = str(tmp_path / "runs")
    common = ["--set", f"graph_file={graph_file}", "--seed", "0", "--out", out]
    for key, value in TINY.items():
        if key == "seeds":
            continue
        common += ["--set", f"{key}={value}"]

    assert main(["defend", "edo"] + common) == 0
    edo = json.loads(capsys.readouterr().out)
    assert os.path.isdir(edo["run_dir"])
    assert set(edo["best_plan"]) <= {"0", "1"}

    assert main(["defend", "greedy"] + common) == 0
    greedy = json.loads(capsys.readouterr().out)
    assert greedy["exact_value"] == greedy["best_fitness"]

    assert main(["train"] + common) == 0
    trained = json.loads(capsys.readouterr().out)
    assert trained["rounds"] == TINY["rounds"]
    assert not os.path.exists(
        os.path.join(trained["run_dir"], "simulation.csv")
    )

    ckpt = os.path.join(edo["run_dir"], "net.ckpt")
    assert (
        main(
            ["simulate", "--plan", edo["best_plan"], "--runs", "500",
             "--checkpoint", ckpt] + common
        )
        == 0
    )
    sim = json.loads(capsys.readouterr().out)
    assert sim["runs"] == 500
    assert 0.0 <= sim["success_rate"] <= 1.0
    csv_lines = open(sim["csv"]).read().strip().splitlines()
    assert len(csv_lines) == 2
    assert csv_lines[0].startswith("plan_id,evaluator,runs")

    assert main(["report", edo["run_dir"], greedy["run_dir"], "--out", out]) == 0
    table = capsys.readouterr().out
    assert open(os.path.join(out, "report.csv")).read() == table
    assert "nndp-edo" in table and "greedy" in table


def test_cli_error_lines_are_machine_readable(tmp_path, capsys, graph_file):
    out = str(tmp_path / "x")
    args = ["--set", f"graph_file={graph_file}", "--seed", "0", "--out", out]

    assert main(["simulate", "--plan", "01"] + args) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "CommandLineError"

    assert main(["defend", "edo", "--set", "no_such=1", "--out", out]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"

    assert main(["defend", "edo", "--config", "/missing.cfg", "--out", out]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"

    assert main([]) == 2
    assert "error" in json.loads(capsys.readouterr().err)

    assert main(["defend", "greedy", "--set", "budget=99"] + args) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "DefenseConfigError"
