import json
from pathlib import Path

import numpy as np
import pytest

from snp.cli import main
from snp.serialize import load_calibration, load_model


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


@pytest.fixture
def workspace(tmp_path, capsys):
    model = tmp_path / "model.snpm"
    calib = tmp_path / "calib.snpc"
    code, _ = run(capsys, "synth", str(model), "--preset", "tiny-desk", "--seed", "3")
    assert code == 0
    code, _ = run(
        capsys, "synth-calib", str(calib), "--preset", "tiny-desk", "--count", "8",
        "--seed", "5",
    )
    assert code == 0
    return tmp_path, model, calib


class TestSynth:
    def test_same_seed_byte_identical(self, tmp_path, capsys):
        a = tmp_path / "a.snpm"
        b = tmp_path / "b.snpm"
        code1, doc1 = run(capsys, "synth", str(a), "--preset", "tiny-desk", "--seed", "9")
        code2, doc2 = run(capsys, "synth", str(b), "--preset", "tiny-desk", "--seed", "9")
        assert code1 == code2 == 0
        assert a.read_bytes() == b.read_bytes()
        assert doc1["fingerprint"] == doc2["fingerprint"]

    def test_manifest_written(self, tmp_path, capsys):
        out = tmp_path / "m.snpm"
        code, doc = run(capsys, "synth", str(out), "--seed", "1")
        assert code == 0
        manifest = json.loads((tmp_path / "m.snpm.manifest.json").read_text())
        assert manifest == doc["manifest"]
        assert manifest["command"] == "synth"
        assert manifest["tool_version"]

    def test_unknown_preset_is_argument_error(self, tmp_path, capsys):
        code = main(["synth", str(tmp_path / "x.snpm"), "--preset", "deit-huge"])
        capsys.readouterr()
        assert code == 4

    def test_calib_round_trip(self, workspace):
        _, _, calib = workspace
        images = load_calibration(calib)
        assert images.shape == (8, 3, 12, 12)


class TestAnalyze:
    def test_deterministic_output_files(self, workspace, capsys):
        tmp, model, calib = workspace
        t1 = tmp / "t1.json"
        t2 = tmp / "t2.json"
        for out in (t1, t2):
            code, _ = run(
                capsys, "analyze", str(model), str(calib), "--images", "4",
                "--out", str(out),
            )
            assert code == 0
        assert t1.read_bytes() == t2.read_bytes()

    def test_default_images_64(self, workspace, capsys):
        tmp, model, calib = workspace
        code, doc = run(capsys, "analyze", str(model), str(calib))
        # only 8 images in the file, default of 64 must be rejected loudly
        assert code == 4

        big = tmp / "big.snpc"
        code, _ = run(capsys, "synth-calib", str(big), "--preset", "tiny-desk",
                      "--count", "64")
        assert code == 0
        code, doc = run(capsys, "analyze", str(model), str(big))
        assert code == 0
        assert doc["manifest"]["parameters"]["images"] == 64
        assert doc["table"]["images"] == 64

    def test_weight_only_criterion_small_calib(self, workspace, capsys):
        _, model, calib = workspace
        code, doc = run(
            capsys, "analyze", str(model), str(calib), "--criterion", "l2",
            "--images", "2",
        )
        assert code == 0
        assert doc["table"]["criterion"] == "l2"

    def test_bad_rank_is_argument_error(self, workspace, capsys):
        _, model, calib = workspace
        code, _ = run(capsys, "analyze", str(model), str(calib), "--images", "2",
                      "--rank", "99")
        assert code == 4


class TestPruneValidate:
    def analyze(self, capsys, model, calib, out):
        code, _ = run(capsys, "analyze", str(model), str(calib), "--images", "4",
                      "--out", str(out))
        assert code == 0

    def test_ratio_zero_round_trip(self, workspace, capsys):
        tmp, model, calib = workspace
        table = tmp / "table.json"
        self.analyze(capsys, model, calib, table)
        pruned = tmp / "pruned.snpm"
        plan = tmp / "plan.json"
        code, doc = run(
            capsys, "prune", str(model), str(table), "--plan", str(plan),
            "--out", str(pruned),
        )
        assert code == 0
        assert doc["params"]["before"] == doc["params"]["after"]
        code, report = run(
            capsys, "validate", str(model), str(pruned), str(plan), str(calib)
        )
        assert code == 0
        assert report["pass"] is True
        assert report["max_logits_diff"] == 0.0
        assert report["attention_similarity"]["mean_abs_cosine"] == pytest.approx(1.0)

    def test_pipeline_qk_half(self, workspace, capsys):
        tmp, model, calib = workspace
        table = tmp / "table.json"
        self.analyze(capsys, model, calib, table)
        pruned = tmp / "pruned.snpm"
        plan = tmp / "plan.json"
        code, doc = run(
            capsys, "prune", str(model), str(table), "--qk", "0.5",
            "--plan", str(plan), "--out", str(pruned),
        )
        assert code == 0
        assert doc["params"]["after"] < doc["params"]["before"]
        assert doc["ratios"]["qk_per_block"] == [0.5, 0.5]
        for path in doc["ratio_files"].values():
            assert Path(path).exists()
        csv_lines = (tmp / "pruned.snpm.ratios.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "block,qk,value,ffn"
        assert len(csv_lines) == 3
        code, report = run(
            capsys, "validate", str(model), str(pruned), str(plan), str(calib)
        )
        assert code == 0
        assert report["pass"] is True
        assert report["max_logits_diff"] <= 1e-4

    def test_neuron_ratios_need_importance(self, workspace, capsys):
        tmp, model, _ = workspace
        code = main(["prune", str(model), "--qk", "0.5", "--out", str(tmp / "p.snpm")])
        capsys.readouterr()
        assert code == 4

    def test_head_only_prune(self, workspace, capsys):
        tmp, model, _ = workspace
        pruned = tmp / "heads.snpm"
        code, doc = run(
            capsys, "prune", str(model), "--heads", "0.5", "--out", str(pruned)
        )
        assert code == 0
        bundle, _ = load_model(pruned)
        assert bundle.config.heads == 1

    def test_tampered_plan_fails_validation(self, workspace, capsys):
        tmp, model, calib = workspace
        table = tmp / "table.json"
        self.analyze(capsys, model, calib, table)
        pruned = tmp / "pruned.snpm"
        plan = tmp / "plan.json"
        code, _ = run(
            capsys, "prune", str(model), str(table), "--qk", "0.5",
            "--plan", str(plan), "--out", str(pruned),
        )
        assert code == 0
        doc = json.loads(plan.read_text())
        for g in doc["groups"]:
            if g["kind"] == "qk_pair" and g["block"] == 0 and g["head"] == 0:
                g["keep"] = g["keep"][:-1]  # break per-head uniformity
        plan.write_text(json.dumps(doc))
        code, report = run(
            capsys, "validate", str(model), str(pruned), str(plan), str(calib)
        )
        assert code == 2
        assert report["pass"] is False
        assert any("differ across heads" in v for v in report["violations"])

    def test_stale_plan_exits_2(self, workspace, capsys):
        tmp, model, calib = workspace
        table = tmp / "table.json"
        self.analyze(capsys, model, calib, table)
        pruned = tmp / "pruned.snpm"
        plan = tmp / "plan.json"
        code, _ = run(
            capsys, "prune", str(model), str(table), "--qk", "0.5",
            "--plan", str(plan), "--out", str(pruned),
        )
        assert code == 0
        other = tmp / "other.snpm"
        code, _ = run(capsys, "synth", str(other), "--preset", "tiny-desk", "--seed", "99")
        assert code == 0
        code, _ = run(capsys, "validate", str(other), str(pruned), str(plan), str(calib))
        assert code == 2


class TestEvaluatorCommands:
    def test_flops_report_files(self, workspace, capsys):
        tmp, model, _ = workspace
        report_dir = tmp / "report"
        code, doc = run(capsys, "flops", str(model), "--report", str(report_dir))
        assert code == 0
        assert doc["flops"] == sum(e["flops"] for e in doc["flops_breakdown"])
        for name in ("cost.json", "cost.txt", "cost.csv", "cost.png",
                     "cost.json.manifest.json"):
            assert (report_dir / name).exists(), name
        assert (report_dir / "cost.png").stat().st_size > 0
        csv_lines = (report_dir / "cost.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "layer,flops"
        assert sum(int(line.split(",")[1]) for line in csv_lines[1:]) == doc["flops"]

    def test_bench_json(self, workspace, capsys):
        _, model, _ = workspace
        code, doc = run(capsys, "bench", str(model), "--runs", "3", "--warmup", "1")
        assert code == 0
        assert doc["runs"] == 3 and len(doc["times_ms"]) == 3
        assert doc["mean_ms"] == pytest.approx(np.mean(doc["times_ms"]))

    def test_attmap_outputs(self, workspace, capsys):
        tmp, model, calib = workspace
        prefix = tmp / "roll"
        code, doc = run(
            capsys, "attmap", str(model), str(calib), "--index", "1",
            "--out", str(prefix),
        )
        assert code == 0
        pgm = (tmp / "roll.pgm").read_bytes()
        assert pgm.startswith(b"P5\n")
        n = doc["tokens"]
        rows = (tmp / "roll.csv").read_text().strip().splitlines()
        assert len(rows) == n
        matrix = np.array([[float(c) for c in r.split(",")] for r in rows])
        assert np.max(np.abs(matrix.sum(axis=1) - 1.0)) <= 1e-5
        assert (tmp / "roll.png").stat().st_size > 0
        assert (tmp / "roll.manifest.json").exists()

    def test_attmap_bad_index(self, workspace, capsys):
        tmp, model, calib = workspace
        code, _ = run(capsys, "attmap", str(model), str(calib), "--index", "99",
                      "--out", str(tmp / "x"))
        assert code == 4


class TestExitCodes:
    def test_corrupt_model_exits_3(self, workspace, capsys):
        tmp, model, _ = workspace
        data = bytearray(model.read_bytes())
        data[:4] = b"JUNK"
        bad = tmp / "bad.snpm"
        bad.write_bytes(bytes(data))
        code, doc = run(capsys, "flops", str(bad))
        assert code == 3
        assert doc["exit_code"] == 3

    def test_truncated_model_exits_3(self, workspace, capsys):
        tmp, model, _ = workspace
        data = model.read_bytes()
        bad = tmp / "short.snpm"
        bad.write_bytes(data[: len(data) // 2])
        code, _ = run(capsys, "flops", str(bad))
        assert code == 3

    def test_bad_ratio_exits_4(self, workspace, capsys):
        tmp, model, calib = workspace
        table = tmp / "t.json"
        code, _ = run(capsys, "analyze", str(model), str(calib), "--images", "2",
                      "--criterion", "l2", "--out", str(table))
        assert code == 0
        code, _ = run(capsys, "prune", str(model), str(table), "--qk", "1.5",
                      "--out", str(tmp / "p.snpm"))
        assert code == 4

    def test_missing_subcommand_exits_4(self, capsys):
        code = main([])
        capsys.readouterr()
        assert code == 4
