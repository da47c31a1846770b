import json

import numpy as np

import pytest

from mcapose.cli import EXIT_CODES, main

TINY = ["--stacks", "1", "--channels", "8", "--input-size", "32", "--depth", "1", "--batch-size", "2"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(root), "--count", "4", "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--steps", "3", "--no-augment", *TINY]) == 0
    return run


def test_synth_is_byte_reproducible(dataset, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--out", str(again), "--count", "4", "--seed", "3"]) == 0
    assert (again / "annotations.json").read_bytes() == (dataset / "annotations.json").read_bytes()
    for img in (dataset / "images").iterdir():
        assert (again / "images" / img.name).read_bytes() == img.read_bytes()


def test_synth_count_zero_is_a_usage_error(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "x"), "--count", "0"]) == EXIT_CODES["usage"]
    assert "error[usage]" in capsys.readouterr().err


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"run_config.json", "metrics.csv", "timing.csv", "checkpoint.bin"} <= names
    rows = (trained / "metrics.csv").read_text().splitlines()
    assert rows[0] == "step,loss,stack1_loss,grad_norm" and len(rows) == 4


def test_train_is_reproducible(dataset, trained, tmp_path):
    run = tmp_path / "run2"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--steps", "3", "--no-augment", *TINY]) == 0
    for name in ("metrics.csv", "checkpoint.bin"):
        assert (run / name).read_bytes() == (trained / name).read_bytes()


def test_config_file_defaults_and_override(dataset, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"steps": 2, "channels": 8, "stacks": 1, "input_size": 32, "depth": 1,
                               "no_augment": True, "batch_size": 2}))
    run = tmp_path / "r"
    assert main(["--config", str(cfg), "train", "--data", str(dataset), "--out", str(run), "--steps", "1"]) == 0
    assert len((run / "metrics.csv").read_text().splitlines()) == 2  # the flag beat the file
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"stepz": 2}))
    assert main(["--config", str(bad), "train", "--data", str(dataset), "--out", str(tmp_path / "q")]) == EXIT_CODES["config"]


def test_invalid_network_config_exit_code(dataset, tmp_path):
    args = ["train", "--data", str(dataset), "--out", str(tmp_path / "r"), "--steps", "1", "--channels", "7"]
    assert main(args) == EXIT_CODES["config"]


def test_missing_data_exit_code(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == EXIT_CODES["data"]


def test_eval_writes_reports(dataset, trained, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(dataset), "--out", str(out),
                 "--tta", "flip"]) == 0
    assert (out / "pck.csv").read_text().startswith("part,rate,count\nhead,")
    assert "PCKh@0.5" in (out / "summary.txt").read_text()


def test_infer_prints_keypoints(dataset, trained, capsys):
    assert main(["infer", "--checkpoint", str(trained / "checkpoint.bin"),
                 "--image", str(dataset / "images" / "000000.ppm")]) == EXIT_CODES["data"]  # 64-px image, 32-px net
    capsys.readouterr()


def test_export_attention_counts(dataset, tmp_path):
    run = tmp_path / "run"
    args = ["train", "--data", str(dataset), "--out", str(run), "--steps", "1", "--no-augment",
            "--stacks", "2", "--channels", "8", "--input-size", "32", "--depth", "1", "--batch-size", "2"]
    assert main(args) == 0
    out = tmp_path / "att"
    assert main(["export-attention", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(dataset),
                 "--image-id", "000001", "--out", str(out), "--parts"]) == 0
    pgms = sorted(p.name for p in out.glob("*.pgm"))
    # stack 1 holistic: refined, fused and one map per ladder level (4, 8); stack 2 parts: fused, levels, 4 parts
    assert pgms == ["stack1_fused.pgm", "stack1_refined.pgm", "stack1_res4.pgm", "stack1_res8.pgm",
                    "stack2_fused.pgm", "stack2_part0.pgm", "stack2_part1.pgm", "stack2_part2.pgm",
                    "stack2_part3.pgm", "stack2_res4.pgm", "stack2_res8.pgm"]
    assert len(list(out.glob("*.txt"))) == len(pgms)


def test_export_parts_without_hp_is_an_error(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--steps", "1", "--no-augment",
                 "--variant", "BL+MS+HRU+MR", *TINY]) == 0
    code = main(["export-attention", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(dataset),
                 "--image-id", "000001", "--out", str(tmp_path / "a"), "--parts"])
    assert code == EXIT_CODES["config"]
    assert "HP disabled" in capsys.readouterr().err


def test_run_directory_is_self_describing(trained):
    echo = json.loads((trained / "run_config.json").read_text())
    assert echo["seed"] == 0 and echo["steps"] == 3 and echo["variant"]
    assert set(echo["versions"]) == {"mcapose", "numpy", "python"}


def test_eval_part_count_mismatch_is_a_data_error(trained, tmp_path, capsys):
    other = tmp_path / "three"
    assert main(["synth", "--out", str(other), "--count", "2", "--parts", "head,l_wrist,r_wrist"]) == 0
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.bin"), "--data", str(other),
                 "--out", str(tmp_path / "ev")])
    assert code == EXIT_CODES["data"]
    assert "4 parts" in capsys.readouterr().err


def test_exported_maps_match_memory_up_to_quantisation(dataset, tmp_path):
    from mcapose.data import load_annotations
    from mcapose.data.transforms import crop_warp
    from mcapose.network import load_network
    from mcapose.pnm import read_pgm

    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run), "--steps", "2", "--no-augment",
                 "--stacks", "2", "--channels", "8", "--input-size", "32", "--depth", "1", "--batch-size", "2"]) == 0
    out = tmp_path / "att"
    assert main(["export-attention", "--checkpoint", str(run / "checkpoint.bin"), "--data", str(dataset),
                 "--image-id", "000002", "--out", str(out), "--parts"]) == 0
    net, _ = load_network(run / "checkpoint.bin")
    net.eval()
    img, ann = [d for d in load_annotations(dataset) if d[1].image_id == "000002"][0]
    outputs = net(crop_warp(img, ann, 32)[0][None])
    memory = {"stack1_refined": outputs[0].holistic["refined"].values.data[0, 0]}
    memory.update({f"stack2_part{p}": m.values.data[0, 0] for p, m in enumerate(outputs[1].part_maps)})
    for name, values in memory.items():
        lo, hi = (float(line.split()[1]) for line in (out / f"{name}.txt").read_text().splitlines())
        assert lo == values.min() and hi == values.max()
        # attention maps are sigmoid outputs: strictly inside the unit interval
        assert 0.0 < lo and hi < 1.0
        back = lo + read_pgm(out / f"{name}.pgm") * (hi - lo)
        assert np.abs(back - values).max() <= 0.5 * (hi - lo) / 255 + 1e-12
