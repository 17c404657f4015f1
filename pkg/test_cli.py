"""
End-to-end tests of the roadmamba command line through main(argv).
"""

import pytest

from roadmamba import __version__
from roadmamba.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from roadmamba.data import load_checkpoint, load_split

RUN_CONFIG = """\
# two-step micro run on 32 px images
variant = micro
image_side = 32
batch_size = 2
total_steps = 2
eval_interval = 1
precision = float64
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(RUN_CONFIG)
    return path


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    code = main(
        ["gen-data", "--out", str(out), "--n-train", "4", "--n-eval", "3", "--side", "32"]
    )
    assert code == EXIT_OK
    return out


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_missing_command_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "roadmamba" in capsys.readouterr().err


def test_unknown_option_is_usage_error():
    assert main(["inspect", "--ckpt", "x", "--frobnicate"]) == EXIT_USAGE


def test_gen_data_writes_both_splits(data_dir):
    assert len(load_split(data_dir, "train")) == 4
    assert len(load_split(data_dir, "eval")) == 3
    assert load_split(data_dir).image_side == 32


def test_gen_data_rejects_small_side(tmp_path, capsys):
    args = ["gen-data", "--out", str(tmp_path), "--n-train", "1", "--n-eval", "1"]
    code = main(args + ["--side", "8"])
    assert code == EXIT_USAGE
    assert "stripe period" in capsys.readouterr().err


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("variant = micro\nbatchsize = 2\n")
    assert main(["init", "--config", str(path), "--out", str(tmp_path / "m.rmba")]) == EXIT_USAGE
    assert "unknown key 'batchsize'" in capsys.readouterr().err


def test_init_then_inspect(config_file, tmp_path, capsys):
    ckpt = tmp_path / "init.rmba"
    assert main(["init", "--config", str(config_file), "--out", str(ckpt)]) == EXIT_OK
    capsys.readouterr()
    assert main(["inspect", "--ckpt", str(ckpt)]) == EXIT_OK
    out = capsys.readouterr().out
    expected = load_checkpoint(ckpt).num_parameters(exclude_prefix="aux_heads.")
    assert f"parameters: {expected}" in out
    assert "auxiliary-head parameters:" in out
    assert "param.stem.conv.weight" in out
    assert "optimizer step" not in out


def test_eval_prints_metrics(config_file, data_dir, tmp_path, capsys):
    ckpt = tmp_path / "init.rmba"
    main(["init", "--config", str(config_file), "--out", str(ckpt)])
    capsys.readouterr()
    code = main(
        ["eval", "--config", str(config_file), "--ckpt", str(ckpt), "--data", str(data_dir)]
    )
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("top1 = ")
    assert [line.split(" = ")[0] for line in lines] == [
        "top1",
        "meanP",
        "meanR",
        "meanF1",
        "hue",
        "stripe",
        "checker",
    ]


def test_eval_missing_checkpoint_is_failure(config_file, data_dir, tmp_path, capsys):
    code = main(
        [
            "eval",
            "--config",
            str(config_file),
            "--ckpt",
            str(tmp_path / "absent.rmba"),
            "--data",
            str(data_dir),
        ]
    )
    assert code == EXIT_FAILURE
    assert "absent.rmba" in capsys.readouterr().err


def test_inspect_dataset_archive_is_failure(data_dir, capsys):
    assert main(["inspect", "--ckpt", str(data_dir / "train.rmba")]) == EXIT_FAILURE
    assert "not a checkpoint" in capsys.readouterr().err


def test_train_writes_checkpoint_and_history(config_file, data_dir, tmp_path, capsys):
    ckpt = tmp_path / "run.rmba"
    args = ["train", "--config", str(config_file), "--out", str(ckpt), "--data", str(data_dir)]
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out.startswith("step 2: loss ")
    assert load_checkpoint(ckpt).step == 2
    assert ckpt.with_suffix(".history.csv").is_file()


def test_bench_reports_flops_and_latency(config_file, capsys):
    assert main(["-v", "bench", "--config", str(config_file), "--repeats", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "convention: 1 multiply-accumulate = 1 FLOP" in out
    assert "GFLOPs at 32px" in out
    assert "forward latency:" in out


def _total_gflops(out):
    line = next(line for line in out.splitlines() if line.startswith("total"))
    return float(line.split()[1])


def test_bench_doubles_flops_under_two_flop_convention(config_file, capsys):
    base = ["bench", "--config", str(config_file), "--repeats", "1"]
    assert main(base) == EXIT_OK
    single = _total_gflops(capsys.readouterr().out)
    assert main(base + ["--flops-per-mac", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "convention: 1 multiply-accumulate = 2 FLOP" in out
    assert single > 0
    assert _total_gflops(out) == pytest.approx(2 * single, abs=2e-3)


def test_bench_rejects_zero_repeats(config_file):
    assert main(["bench", "--config", str(config_file), "--repeats", "0"]) == EXIT_USAGE


@pytest.mark.slow
def test_ablate_daf_axis(config_file, data_dir, capsys):
    args = ["ablate", "--config", str(config_file), "--axis", "daf", "--data", str(data_dir)]
    assert main(args + ["--seeds", "0"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("arm")
