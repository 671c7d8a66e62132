import json

import numpy as np
import pytest

from polarkit import formats
from polarkit.cli import main
from polarkit.fusion import ModelConfig, write_toy_dataset
from polarkit.mosaic import tile_stack
from polarkit.stokes import StokesMap, synthesize_stack

from test_datagen import make_reflection_record, make_transparent_record


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out.strip().splitlines()
    summary = json.loads(out[-1]) if out else {}
    return code, summary


def make_raw_fixture(tmp_path, shape=(8, 10), seed=0):
    """Integer-valued synthesized mosaic: residual and round trip are exact."""
    rng = np.random.default_rng(seed)
    s0 = 2 * rng.integers(200, 2000, size=shape)
    s1 = 2 * rng.integers(-100, 100, size=shape)
    s2 = 2 * rng.integers(-100, 100, size=shape)
    sm = StokesMap(s0=s0.astype(float), s1=s1.astype(float), s2=s2.astype(float))
    frame = tile_stack(synthesize_stack(sm))
    path = tmp_path / "frame.raw"
    formats.write_raw_mosaic(path, frame)
    return path, sm


def write_rgb(path, values):
    formats.write_float_map(path, values, ["r", "g", "b"])


class TestDecodeEncode:
    def test_decode_round_trip_residual_zero(self, tmp_path, capsys):
        raw, _ = make_raw_fixture(tmp_path)
        code, summary = run_cli(capsys, "decode", str(raw), str(tmp_path / "maps"))
        assert code == 0
        assert summary["residual_max"] == 0.0
        channels, names, meta = formats.read_float_map(tmp_path / "maps" / "stokes.pfm")
        assert names == ["s0", "s1", "s2"]
        assert "config" in meta

    def test_decode_full_res(self, tmp_path, capsys):
        raw, _ = make_raw_fixture(tmp_path)
        code, summary = run_cli(
            capsys, "decode", str(raw), str(tmp_path / "maps"), "--full-res", "--method", "nearest"
        )
        assert code == 0
        channels, _, _ = formats.read_float_map(tmp_path / "maps" / "stokes.pfm")
        assert channels.shape[1:] == (16, 20)  # full raw-frame resolution

    def test_decode_is_idempotent(self, tmp_path, capsys):
        raw, _ = make_raw_fixture(tmp_path)
        run_cli(capsys, "decode", str(raw), str(tmp_path / "a"))
        run_cli(capsys, "decode", str(raw), str(tmp_path / "b"))
        for name in ("stokes.pfm", "polar.pfm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_encode_from_decoded_maps(self, tmp_path, capsys):
        raw, _ = make_raw_fixture(tmp_path)
        run_cli(capsys, "decode", str(raw), str(tmp_path / "maps"))
        code, summary = run_cli(
            capsys,
            "encode",
            str(tmp_path / "maps" / "stokes.pfm"),
            str(tmp_path / "enc.pfm"),
            "--variant",
            "decoupled",
        )
        assert code == 0
        channels, names, _ = formats.read_float_map(tmp_path / "enc.pfm")
        assert names == ["dolp", "sin2phi", "cos2phi"]
        live = channels[0] > 0
        assert np.abs((channels[1] ** 2 + channels[2] ** 2)[live] - 1).max() < 1e-5

    def test_missing_input_exits_3(self, tmp_path, capsys):
        code = main(["decode", str(tmp_path / "nope.raw"), str(tmp_path / "out")])
        assert code == 3

    def test_bad_usage_exits_2(self, capsys):
        assert main(["decode"]) == 2
        assert main(["not-a-command"]) == 2


class TestAnalysisCommands:
    def _reflection_fixture(self, tmp_path):
        shape = (16, 16)
        dolp = np.zeros(shape)
        dolp[4:12, 5:13] = 0.9
        formats.write_float_map(tmp_path / "polar.pfm", np.stack([dolp, np.zeros(shape)]), ["dolp", "aolp"])
        rgb_with = np.full((3,) + shape, 0.2)
        rgb_with[:, 4:12, 5:13] = 0.7
        write_rgb(tmp_path / "with.pfm", rgb_with)
        write_rgb(tmp_path / "without.pfm", np.full((3,) + shape, 0.2))

    def test_analyze_reflection(self, tmp_path, capsys):
        self._reflection_fixture(tmp_path)
        code, summary = run_cli(
            capsys,
            "analyze-reflection",
            str(tmp_path / "polar.pfm"),
            str(tmp_path / "with.pfm"),
            str(tmp_path / "without.pfm"),
            str(tmp_path / "out"),
        )
        assert code == 0
        assert summary["coverage_fraction"] == pytest.approx(64 / 256)
        payload = formats.read_json(tmp_path / "out" / "reflection_evidence.json")
        assert payload["evidence"]["mean_dolp_inside"] == pytest.approx(0.9, abs=1e-6)
        assert payload["region_position"] == "center"

    def test_analyze_glass(self, tmp_path, capsys):
        shape = (6, 8)
        dolp = np.full(shape, 0.4)
        formats.write_float_map(tmp_path / "polar.pfm", np.stack([dolp, np.zeros(shape)]), ["dolp", "aolp"])
        doc = {
            "images": [{"id": 1, "width": 8, "height": 6}],
            "annotations": [
                {"id": 5, "image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4],
                 "segmentation": {"size": [6, 8], "counts": [0, 48]}}
            ],
            "categories": [{"id": 1, "name": "glass"}],
        }
        (tmp_path / "coco.json").write_text(json.dumps(doc))
        code, summary = run_cli(
            capsys, "analyze-glass", str(tmp_path / "coco.json"),
            str(tmp_path / "polar.pfm"), str(tmp_path / "glass.json"),
        )
        assert code == 0 and summary["instances"] == 1
        payload = formats.read_json(tmp_path / "glass.json")
        assert payload["instances"][0]["dolp_mean"] == pytest.approx(0.4, abs=1e-6)

    def test_diff_detections(self, tmp_path, capsys):
        formats.write_json(
            tmp_path / "with.json",
            {"detections": [
                {"label": "car", "bbox": [2, 2, 5, 3], "confidence": 0.9},
                {"label": "cup", "bbox": [10, 10, 2, 2], "confidence": 0.8},
            ]},
        )
        formats.write_json(
            tmp_path / "without.json",
            {"detections": [{"label": "cup", "bbox": [10, 10, 2, 2], "confidence": 0.85}]},
        )
        code, summary = run_cli(
            capsys, "diff-detections", str(tmp_path / "with.json"),
            str(tmp_path / "without.json"), str(tmp_path / "diff.json"),
        )
        assert code == 0
        assert summary["spurious"] == 1 and summary["persistent"] == 1
        payload = formats.read_json(tmp_path / "diff.json")
        assert payload["spurious"][0]["label"] == "car"


class TestGenCompose:
    def _records_file(self, tmp_path, n_reflection=2, n_transparent=1):
        records = [make_reflection_record(f"scene-r{k}").as_dict() for k in range(n_reflection)]
        records += [make_transparent_record(f"scene-t{k}").as_dict() for k in range(n_transparent)]
        path = tmp_path / "records.jsonl"
        formats.write_jsonl(path, records)
        return path

    def test_gen_stub_is_deterministic(self, tmp_path, capsys):
        records = self._records_file(tmp_path)
        code_a, summary = run_cli(capsys, "gen", str(records), str(tmp_path / "a"), "--client", "stub")
        code_b, _ = run_cli(capsys, "gen", str(records), str(tmp_path / "b"), "--client", "stub")
        assert code_a == 0 and code_b == 0
        assert summary["rejections"] == 0
        for name in ("captions.jsonl", "instructions.jsonl", "gen_report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_gen_then_compose(self, tmp_path, capsys):
        records = self._records_file(tmp_path, n_reflection=4, n_transparent=2)
        run_cli(capsys, "gen", str(records), str(tmp_path / "gen"), "--client", "stub", "--stage", "1")
        targets = {
            "captions": {
                "train": {"reflection": 9, "transparent": 3},
                "val": {"reflection": 3, "transparent": 3},
            }
        }
        formats.write_json(tmp_path / "targets.json", targets)
        code, summary = run_cli(
            capsys, "compose", str(tmp_path / "gen"), str(tmp_path / "targets.json"),
            str(tmp_path / "composed"),
        )
        assert code == 0 and summary["captions"] == 18
        report = formats.read_json(tmp_path / "composed" / "composition_report.json")
        assert report["reports"]["captions"]["by_split"] == {"train": 12, "val": 6}

    def test_compose_shortfall_exits_5(self, tmp_path, capsys):
        records = self._records_file(tmp_path, n_reflection=1, n_transparent=0)
        run_cli(capsys, "gen", str(records), str(tmp_path / "gen"), "--client", "stub", "--stage", "1")
        formats.write_json(tmp_path / "targets.json", {"captions": {"train": {"reflection": 30}}})
        code = main(["compose", str(tmp_path / "gen"), str(tmp_path / "targets.json"), str(tmp_path / "c")])
        assert code == 5

    def test_gen_with_nothing_accepted_exits_5(self, tmp_path, capsys):
        formats.write_jsonl(tmp_path / "records.jsonl", [])
        code = main(["gen", str(tmp_path / "records.jsonl"), str(tmp_path / "out"), "--client", "stub"])
        assert code == 5

    def test_live_client_without_endpoint_exits_2(self, tmp_path, capsys):
        records = self._records_file(tmp_path)
        code = main(["gen", str(records), str(tmp_path / "out"), "--client", "live"])
        assert code == 2

    def test_unreachable_endpoint_exits_4(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("POLARKIT_API_KEY", "test-key")
        records = self._records_file(tmp_path, n_reflection=1, n_transparent=0)
        code = main([
            "gen", str(records), str(tmp_path / "out"), "--client", "live",
            "--endpoint", "http://127.0.0.1:9/v1/chat", "--retries", "1",
        ])
        assert code == 4


SIM_CONFIG = {
    "model": {
        "embed_dim": 16,
        "num_layers": 1,
        "num_heads": 2,
        "vocab_size": 32,
        "visual_tokens_per_stream": 4,
        "encoder_dim": 8,
        "encoder_layers": 1,
        "encoder_heads": 2,
        "patch_size": 2,
        "seed": 5,
    },
    "stage1_steps": 4,
    "stage2_steps": 4,
    "lr_stage1": 0.01,
    "lr_stage2": 0.01,
}


class TestTrainSim:
    def test_train_then_attn_report(self, tmp_path, capsys):
        cfg = ModelConfig.from_dict(SIM_CONFIG["model"])
        data = write_toy_dataset(tmp_path / "data", cfg, n_stage1=2, n_stage2=2, seed=3)
        formats.write_json(tmp_path / "sim.json", SIM_CONFIG)
        code, summary = run_cli(
            capsys, "train-sim", str(tmp_path / "sim.json"), str(data), str(tmp_path / "run")
        )
        assert code == 0
        assert (tmp_path / "run" / "checkpoint_stage1.ckpt").exists()
        assert (tmp_path / "run" / "checkpoint_stage2.ckpt").exists()
        log = formats.read_json(tmp_path / "run" / "training_log.json")
        assert len(log["stages"]["stage1"]["losses"]) == 4

        code, summary = run_cli(
            capsys, "attn-report", str(tmp_path / "run" / "checkpoint_stage2.ckpt"),
            str(data), str(tmp_path / "attn.json"),
        )
        assert code == 0
        payload = formats.read_json(tmp_path / "attn.json")
        ratios = payload["polarization_attention_ratio_per_layer"]
        assert len(ratios) == 1 and 0.0 <= ratios[0] <= 1.0
        assert 0.0 <= summary["mean_ratio"] <= 1.0

    def test_train_sim_is_deterministic(self, tmp_path, capsys):
        cfg = ModelConfig.from_dict(SIM_CONFIG["model"])
        data = write_toy_dataset(tmp_path / "data", cfg, n_stage1=2, n_stage2=2, seed=3)
        formats.write_json(tmp_path / "sim.json", SIM_CONFIG)
        run_cli(capsys, "train-sim", str(tmp_path / "sim.json"), str(data), str(tmp_path / "r1"))
        run_cli(capsys, "train-sim", str(tmp_path / "sim.json"), str(data), str(tmp_path / "r2"))
        assert (tmp_path / "r1" / "checkpoint_stage2.ckpt").read_bytes() == (
            tmp_path / "r2" / "checkpoint_stage2.ckpt"
        ).read_bytes()


class TestJudgeCommand:
    def _fixture(self, tmp_path):
        predictions = [
            {"sample_id": f"s{k}", "task": task, "question": "Can you describe this scene for me?",
             "prediction": f"prediction text {k}"}
            for k, task in enumerate(["glass_counting", "glass_counting", "scene_description"])
        ]
        references = [{"sample_id": f"s{k}", "reference": f"reference text {k}"} for k in range(3)]
        formats.write_jsonl(tmp_path / "pred.jsonl", predictions)
        formats.write_jsonl(tmp_path / "ref.jsonl", references)

    def test_judge_stub_table(self, tmp_path, capsys):
        self._fixture(tmp_path)
        code, summary = run_cli(
            capsys, "judge", str(tmp_path / "pred.jsonl"), str(tmp_path / "ref.jsonl"),
            str(tmp_path / "out"), "--client", "stub",
        )
        assert code == 0 and summary["samples"] == 3
        payload = formats.read_json(tmp_path / "out" / "results.json")
        per_task = payload["per_task"]
        scores = [per_task[t]["mean"] * per_task[t]["count"] for t in per_task]
        assert payload["overall"] == pytest.approx(sum(scores) / 3)
        table_text = (tmp_path / "out" / "results_table.txt").read_text()
        assert "Overall" in table_text

    def test_judge_is_deterministic(self, tmp_path, capsys):
        self._fixture(tmp_path)
        run_cli(capsys, "judge", str(tmp_path / "pred.jsonl"), str(tmp_path / "ref.jsonl"),
                str(tmp_path / "o1"), "--client", "stub")
        run_cli(capsys, "judge", str(tmp_path / "pred.jsonl"), str(tmp_path / "ref.jsonl"),
                str(tmp_path / "o2"), "--client", "stub")
        assert (tmp_path / "o1" / "results.json").read_bytes() == (tmp_path / "o2" / "results.json").read_bytes()

    def test_missing_reference_exits_3(self, tmp_path, capsys):
        formats.write_jsonl(tmp_path / "pred.jsonl", [
            {"sample_id": "s0", "task": "glass_counting", "question": "q", "prediction": "p"}
        ])
        formats.write_jsonl(tmp_path / "ref.jsonl", [])
        code = main(["judge", str(tmp_path / "pred.jsonl"), str(tmp_path / "ref.jsonl"),
                     str(tmp_path / "out")])
        assert code == 3
