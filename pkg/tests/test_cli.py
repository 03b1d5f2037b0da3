import json

import pytest

from seqx.bench import generate_dataset, load_dataset, save_dataset
from seqx.cli import main
from seqx.model import load_model


@pytest.fixture
def dataset_path(tmp_path):
    path = tmp_path / "data.jsonl"
    save_dataset(generate_dataset(12, 3, seed=4), path)
    return path


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(
        json.dumps(
            {
                "objective": "sll-sle",
                "alpha": 0.75,
                "s": 3,
                "M": 1,
                "N": 2,
                "lr_xe": 5e-4,
                "lr_sll": 1e-4,
                "max_len": 10,
                "beam_width": 5,
                "seed": 0,
            }
        )
    )
    return path


class TestGenData:
    def test_writes_dataset(self, tmp_path):
        out = tmp_path / "scenes.jsonl"
        assert main(["gen-data", "--scenes", "7", "--refs", "4", "--seed", "2", "--out", str(out)]) == 0
        assert len(load_dataset(out)) == 7

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        main(["gen-data", "--scenes", "5", "--refs", "3", "--seed", "9", "--out", str(a)])
        main(["gen-data", "--scenes", "5", "--refs", "3", "--seed", "9", "--out", str(b)])
        assert a.read_text() == b.read_text()

    def test_too_many_refs_fails(self, tmp_path, capsys):
        out = tmp_path / "x.jsonl"
        assert main(["gen-data", "--scenes", "5", "--refs", "99", "--out", str(out)]) == 1
        assert "refs_per_scene" in capsys.readouterr().err


class TestTrainEvalPipeline:
    def test_full_pipeline(self, tmp_path, dataset_path, config_path, capsys):
        model_path = tmp_path / "model.json"
        code = main(
            [
                "train",
                "--config",
                str(config_path),
                "--data",
                str(dataset_path),
                "--out",
                str(model_path),
                "--emb-dim",
                "8",
                "--hidden",
                "16",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        records = [json.loads(line) for line in out.splitlines() if line.startswith("{")]
        assert [r["epoch"] for r in records] == [0, 1]
        assert records[0]["phase"] == "xe"
        assert records[1]["phase"] == "sll-sle"
        assert model_path.exists()
        load_model(model_path)

        report_path = tmp_path / "report.json"
        code = main(
            [
                "eval",
                "--model",
                str(model_path),
                "--data",
                str(dataset_path),
                "--strategy",
                "rs",
                "--seed",
                "3",
                "--max-len",
                "10",
                "--report",
                str(report_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["strategy"] == "rs"
        assert report["num_inputs"] == 12
        assert 0.0 <= report["mean_cider"] <= 1.0
        assert set(report) == {
            "strategy",
            "mean_cider",
            "div1",
            "div2",
            "mbleu4",
            "num_inputs",
            "padded_beams",
        }

    def test_objective_override(self, tmp_path, dataset_path, config_path, capsys):
        model_path = tmp_path / "model.json"
        code = main(
            [
                "train",
                "--config",
                str(config_path),
                "--data",
                str(dataset_path),
                "--out",
                str(model_path),
                "--objective",
                "xe",
                "--emb-dim",
                "8",
                "--hidden",
                "16",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        phases = {json.loads(line)["phase"] for line in out.splitlines() if line.startswith("{")}
        assert phases == {"xe"}

    def test_unknown_config_key_fails(self, tmp_path, dataset_path, capsys):
        bad_config = tmp_path / "bad.json"
        bad_config.write_text('{"objective": "sll", "mystery": 3}')
        code = main(
            ["train", "--config", str(bad_config), "--data", str(dataset_path), "--out", "m.json"]
        )
        assert code == 1
        assert "unknown config keys" in capsys.readouterr().err


class TestArgumentValidation:
    def test_eval_without_model_exits_one_with_usage(self, capsys):
        assert main(["eval", "--data", "x.jsonl", "--strategy", "rs", "--report", "r.json"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_rejected(self, capsys):
        assert main(["gen-data", "--scenes", "3", "--refs", "2", "--out", "x", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand_rejected(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_data_file(self, tmp_path, config_path, capsys):
        code = main(
            ["train", "--config", str(config_path), "--data", str(tmp_path / "nope.jsonl"), "--out", "m"]
        )
        assert code == 1


class TestScore:
    def test_scores_caption_files(self, tmp_path):
        candidates = tmp_path / "cands.jsonl"
        references = tmp_path / "refs.jsonl"
        candidates.write_text(
            '{"id": "a", "captions": ["a red circle moves left", "the red circle is moving left"]}\n'
            '{"id": "b", "captions": ["a blue cube falls down"]}\n'
        )
        references.write_text(
            '{"id": "a", "captions": ["a red circle moves left", "the red circle moves left now"]}\n'
            '{"id": "b", "captions": ["the blue cube is falling down"]}\n'
        )
        report_path = tmp_path / "scores.json"
        code = main(
            [
                "score",
                "--candidates",
                str(candidates),
                "--references",
                str(references),
                "--report",
                str(report_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["num_inputs"] == 2
        assert report["per_id"]["a"]["mean_cider"] > 0.0
        assert "div1" in report["per_id"]["a"]
        assert "div1" not in report["per_id"]["b"]  # single candidate has no set diversity

    def test_missing_reference_id_fails(self, tmp_path, capsys):
        candidates = tmp_path / "cands.jsonl"
        references = tmp_path / "refs.jsonl"
        candidates.write_text('{"id": "a", "captions": ["x y"]}\n')
        references.write_text('{"id": "b", "captions": ["x y"]}\n')
        code = main(
            ["score", "--candidates", str(candidates), "--references", str(references), "--report", "r"]
        )
        assert code == 1
        assert "without references" in capsys.readouterr().err

    def test_malformed_candidate_line_fails(self, tmp_path, capsys):
        candidates = tmp_path / "cands.jsonl"
        references = tmp_path / "refs.jsonl"
        candidates.write_text('{"id": "a"}\n')
        references.write_text('{"id": "a", "captions": ["x"]}\n')
        code = main(
            ["score", "--candidates", str(candidates), "--references", str(references), "--report", "r"]
        )
        assert code == 1
        assert "line 1" in capsys.readouterr().err


class TestCheckExact:
    def test_all_checks_pass_on_fresh_model(self, capsys):
        code = main(["check-exact", "--vocab-size", "3", "--max-len", "3", "--seed", "0"])
        out = capsys.readouterr().out
        payload = json.loads(out)
        assert code == 0
        assert payload["all_passed"] is True
        names = {check["name"] for check in payload["checks"]}
        assert names == {
            "probability_normalization",
            "score_function_identity",
            "exact_gradient_vs_finite_difference",
            "objective_at_alpha_1_equals_gp",
            "sample_rescore_consistency",
        }
        for check in payload["checks"]:
            assert check["passed"] is True
