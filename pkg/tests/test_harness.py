import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskgraph import harness
from riskgraph.cli import main
from riskgraph.dpag import ObjectType
from riskgraph.encoder import LABEL_DIM, IntersectionGeometry, ObjectSnapshot, SceneFrame
from riskgraph.errors import ConfigInvalid, EmptySet, FormatError
from riskgraph.network import Architecture, NetworkParams, load_checkpoint, save_checkpoint
from riskgraph.scenario import default_scenario_config, generate_pattern_set


@pytest.fixture(scope="module")
def small_set():
    return generate_pattern_set(default_scenario_config(), 40, 3, workers=1)


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, [json.loads(line) for line in out.splitlines()], err


class TestClassify:
    def test_all_positive_predictions(self):
        m = harness.classify(np.ones(10), [1.0] * 6 + [0.0] * 4)
        assert m.overall_generalization_pct == 60.0
        assert m.collision_generalization_pct == 100.0
        assert (m.tp, m.fp, m.tn, m.fn, m.n) == (6, 4, 0, 0, 10)

    def test_threshold_is_inclusive(self):
        m = harness.classify([0.5, 0.4999], [0.5, 0.0])
        assert (m.tp, m.tn) == (1, 1)

    def test_no_positives(self):
        m = harness.classify([0.1, 0.2], [0.0, 0.3])
        assert m.collision_generalization_pct is None and m.overall_generalization_pct == 100.0

    def test_empty(self):
        with pytest.raises(EmptySet):
            harness.classify([], [])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=40),
           st.integers(0, 2**31))
    def test_order_invariant(self, pairs, seed):
        y, t = np.array(pairs).T
        perm = np.random.default_rng(seed).permutation(len(y))
        assert harness.classify(y, t).to_dict() == harness.classify(y[perm], t[perm]).to_dict()

    def test_evaluate_zero_model(self, small_set):
        params = NetworkParams.zeros(Architecture(3, LABEL_DIM, 2, 4))
        m = harness.evaluate(small_set, params)
        positives = sum(p.target >= 0.5 for p in small_set)
        assert m.collision_generalization_pct == 100.0
        assert m.overall_generalization_pct == pytest.approx(100.0 * positives / len(small_set))


class TestSplit:
    def test_protocol_sizes(self):
        train, val = harness.split(list(range(4000)), 0.5, 0)
        assert len(train) == len(val) == 2000
        assert sorted(train + val) == list(range(4000))

    def test_floor(self):
        train, val = harness.split(list(range(10)), 1 - 1e-6, 0)
        assert (len(train), len(val)) == (9, 1)

    def test_seeded(self):
        assert harness.split(list(range(50)), 0.3, 4) == harness.split(list(range(50)), 0.3, 4)
        assert harness.split(list(range(50)), 0.3, 4) != harness.split(list(range(50)), 0.3, 5)

    def test_invalid(self):
        for frac in (0.0, 1.0, -0.2):
            with pytest.raises(ConfigInvalid):
                harness.split([1, 2], frac, 0)
        with pytest.raises(EmptySet):
            harness.split([], 0.5, 0)


class TestPersistence:
    def test_pattern_set_round_trip(self, small_set, tmp_path):
        path = tmp_path / "p.jsonl"
        harness.save_pattern_set(path, small_set)
        again = harness.load_pattern_set(path)
        assert [p.to_record() for p in again] == [p.to_record() for p in small_set]
        assert again.seed == 3 and again.geometry.to_dict() == small_set.geometry.to_dict()

    def test_pattern_set_rejects_other_major(self, small_set, tmp_path):
        path = tmp_path / "p.jsonl"
        harness.save_pattern_set(path, small_set)
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["format_version"] = "2.0"
        path.write_text("\n".join([json.dumps(header)] + lines[1:]))
        with pytest.raises(FormatError):
            harness.load_pattern_set(path)

    def test_pattern_set_count_mismatch(self, small_set, tmp_path):
        path = tmp_path / "p.jsonl"
        harness.save_pattern_set(path, small_set)
        path.write_text("\n".join(path.read_text().splitlines()[:-1]))
        with pytest.raises(FormatError):
            harness.load_pattern_set(path)

    def test_config_hash_is_stable(self):
        a = harness.config_hash({"b": 1, "a": [1, 2]})
        assert a == harness.config_hash({"a": [1, 2], "b": 1})
        assert a != harness.config_hash({"a": [1, 2], "b": 2})


class TestTraining:
    def test_train_config(self):
        assert harness.TrainConfig.from_dict({"max_epochs": 5}).max_epochs == 5
        with pytest.raises(ConfigInvalid):
            harness.TrainConfig.from_dict({"epochs": 5})
        with pytest.raises(ConfigInvalid):
            harness.TrainConfig(optimizer="adam")
        with pytest.raises(ConfigInvalid):
            harness.TrainConfig(rho=1.0)

    def test_deterministic_training(self, small_set):
        patterns = harness.training_patterns(small_set)
        arch = Architecture(3, LABEL_DIM, 2, 4)
        config = harness.TrainConfig(max_epochs=5, seed=2)
        p1, r1 = harness.train(patterns, arch, config)
        p2, r2 = harness.train(patterns, arch, config)
        np.testing.assert_array_equal(p1.vector, p2.vector)
        assert r1.to_records() == r2.to_records()
        assert harness.evaluate(patterns, p1).to_dict() == harness.evaluate(patterns, p2).to_dict()

    def test_gradcheck(self):
        result = harness.gradcheck(seed=0, trials=10)
        assert result["max_relative_error"] < 1e-6 and result["trials"] == 10

    def test_relative_error_floor(self):
        np.testing.assert_allclose(harness.relative_error([1.0, 1e-9], [1.1, 2e-9]),
                                   [0.1 / 1.1, 1e-9 / 1e-6])


class TestRepro:
    def test_small_run_writes_everything(self, tmp_path):
        result = harness.repro_table3(seed=0, out_dir=tmp_path, count=60, epochs=3,
                                      state_dim=3, hidden_dim=4, workers=1)
        assert (result["train"], result["validation"]) == (30, 30)
        assert set(result["row"]) == {"architecture", "epochs", "collision_pct", "overall_pct"}
        for name in ("patterns.jsonl", "model.ckpt", "train_report.jsonl", "table3.tsv",
                     "table3.json", "training_curve.png", "generalization.png", "manifest.json"):
            assert (tmp_path / name).stat().st_size > 0
        rows = (tmp_path / "table3.tsv").read_text().splitlines()
        assert rows[0].split("\t") == list(harness.TABLE_COLUMNS)
        assert [r.split("\t")[0] for r in rows[1:]] == ["published", "published", "this run"]
        params, _ = load_checkpoint(tmp_path / "model.ckpt")
        ps = harness.load_pattern_set(tmp_path / "patterns.jsonl")
        assert len(ps) == 60 and params.arch == Architecture(3, LABEL_DIM, 2, 4)


class TestCli:
    def test_pipeline(self, capsys, tmp_path):
        pats, model, report = tmp_path / "p.jsonl", tmp_path / "m.ckpt", tmp_path / "r.jsonl"
        code, out, _ = run_cli(capsys, "generate", "--count", 30, "--seed", 1, "--out", pats)
        assert code == 0 and out[0]["count"] == 30
        code, out, _ = run_cli(capsys, "train", "--patterns", pats, "--arch", "3,4", "--epochs", 2,
                               "--out", model, "--report", report)
        assert code == 0 and out[0]["epochs"] <= 2
        assert (tmp_path / "r.png").exists()
        records = harness.read_jsonl(report)
        assert records[0]["kind"] == "train_report" and records[-1]["kind"] == "summary"
        code, out, _ = run_cli(capsys, "eval", "--patterns", pats, "--model", model)
        assert code == 0 and out[0]["n"] == 30

    def test_eval_zero_model(self, capsys, tmp_path, small_set):
        pats, model = tmp_path / "p.jsonl", tmp_path / "zero.ckpt"
        harness.save_pattern_set(pats, small_set)
        save_checkpoint(model, NetworkParams.zeros(Architecture(2, LABEL_DIM, 2, 2)))
        code, out, _ = run_cli(capsys, "eval", "--patterns", pats, "--model", model)
        positives = sum(p.target >= 0.5 for p in small_set)
        assert code == 0
        assert out[0]["collision_generalization_pct"] == 100.0
        assert out[0]["overall_generalization_pct"] == pytest.approx(100.0 * positives / 40)

    def test_encode(self, capsys, tmp_path):
        host = [ObjectSnapshot("host", ObjectType.VEHICLE, (1.5, -30.0 + 2 * j), 10.0, (0, 1), 0.2 * j)
                for j in range(3)]
        remote = ObjectSnapshot("r", ObjectType.VEHICLE, (-1.5, 10.0), 10.0, (0, -1), 0.0)
        frames = [SceneFrame(h.timestamp, h, (remote,) if j == 0 else ()) for j, h in enumerate(host)]
        scene, out_path = tmp_path / "scene.json", tmp_path / "graph.json"
        harness.save_scene(scene, frames, IntersectionGeometry())
        code, out, _ = run_cli(capsys, "encode", "--scene", scene, "--out", out_path)
        assert code == 0 and out[0]["nodes"] == 4 and out[0]["depth"] == 3
        assert json.loads(out_path.read_text())["format_version"] == "1.0"

    def test_gradcheck(self, capsys):
        code, out, _ = run_cli(capsys, "gradcheck", "--trials", 5)
        assert code == 0 and out[0]["max_relative_error"] < 1e-6

    def test_repro(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "repro-tableIII", "--count", 40, "--epochs", 1,
                               "--out-dir", tmp_path, "--no-figures")
        assert code == 0
        assert [r["source"] for r in out[:3]] == ["published", "published", "this run"]
        assert out[-1]["kind"] == "summary"
        assert not (tmp_path / "generalization.png").exists()

    def test_exit_codes(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "eval", "--patterns", tmp_path / "missing.jsonl",
                               "--model", tmp_path / "missing.ckpt")
        assert code == 4 and json.loads(err)["exit_code"] == 4
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code, _, err = run_cli(capsys, "generate", "--config", bad, "--out", tmp_path / "p.jsonl")
        assert code == 2 and json.loads(err)["error"] == "ConfigInvalid"
        opts = tmp_path / "opts.json"
        opts.write_text(json.dumps({"momentum": 0.9}))
        pats = tmp_path / "p.jsonl"
        harness.save_pattern_set(pats, generate_pattern_set(default_scenario_config(), 5, 0, workers=1))
        code, _, _ = run_cli(capsys, "train", "--patterns", pats, "--config", opts,
                             "--out", tmp_path / "m", "--report", tmp_path / "r")
        assert code == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "riskgraph", "gradcheck", "--trials", "2"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["kind"] == "gradcheck"
