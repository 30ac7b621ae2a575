import json
import subprocess
import sys

import pytest

from agingquant import report
from agingquant.cli import main
from agingquant.sta import SWEEP_COLUMNS

FAST = ["--epochs", "4", "--vectors", "2000", "--levels", "0,50"]

GOLDEN_HEADERS = {
    "characterize": {"delay_sweep.csv": ",".join(SWEEP_COLUMNS),
                     "normalized_delay.csv": "dvth_mv,baseline_norm_delay,alpha,beta,padding,selected_norm_delay"},
    "age-errors": {"age_errors.csv": "dvth_mv,alpha,beta,padding,deadline,med,msb_flip_prob,error_rate,norm_energy"},
    "inject": {"inject.csv": "p,mean_accuracy,median_accuracy,min_accuracy,max_accuracy"},
    "select": {"selection.csv": "level,alpha,beta,padding,method,accuracy,accuracy_loss,norm_delay,norm_energy,"
                                "timing_errors,verify_vectors"},
    "energy": {"energy.csv": "dvth_mv,alpha,beta,padding,deadline,med,msb_flip_prob,error_rate,norm_energy"},
    "validate-surrogate": {"surrogate.csv": "method,pearson"},
    "train": {"train.csv": "epoch,train_loss"},
    "quantize": {"quantize.csv": "method,alpha,beta,padding,fp32_accuracy,accuracy,accuracy_loss,"
                                 "bias_saturations,overflows"},
}

ARGS = {
    "characterize": ["--levels", "0,50"],
    "age-errors": ["--vectors", "2000", "--levels", "0,50"],
    "inject": ["--epochs", "4", "--trials", "2", "--p-grid", "0,1e-3"],
    "select": FAST,
    "energy": FAST + ["--trace-driven", "--trace-samples", "4"],
    "validate-surrogate": ["--epochs", "4", "--grid-max", "2"],
    "train": ["--epochs", "3"],
    "quantize": ["--epochs", "3", "--alpha", "1", "--beta", "2", "--padding", "LSB", "--trace-samples", "2"],
}


@pytest.mark.parametrize("command", list(GOLDEN_HEADERS))
def test_headers_and_rerun(tmp_path, command):
    out = tmp_path / "run"
    assert main([command, *ARGS[command], "--out", str(out)]) == 0
    for name, header in GOLDEN_HEADERS[command].items():
        assert (out / name).read_text().splitlines()[0] == header
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == command and manifest["config"]["seed"] == 0
    assert set(manifest["versions"]) >= {"agingquant", "numpy", "scipy", "python"}
    again = tmp_path / "again"
    assert main(["rerun", str(out / "manifest.json"), "--out", str(again)]) == 0
    for name in GOLDEN_HEADERS[command]:
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_characterize_grid(tmp_path):
    assert main(["characterize", "--out", str(tmp_path)]) == 0
    rows = report.read_csv(tmp_path / "delay_sweep.csv")
    assert len(rows) == 2 * 81 * 6
    base = {r["dvth_mv"]: float(r["normalized_delay"]) for r in rows if r["alpha"] == r["beta"] == "0"}
    assert base["0"] == 1.0 and base["50"] == pytest.approx(1.23, abs=0.02)


def test_json_format(tmp_path):
    assert main(["age-errors", "--vectors", "500", "--dvth", "20", "--format", "json", "--out", str(tmp_path)]) == 0
    records = json.loads((tmp_path / "age_errors.json").read_text())
    assert len(records) == 1 and records[0]["dvth_mv"] == 20.0


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"levels": "0,10", "vectors": 300}))
    assert main(["age-errors", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len(report.read_csv(tmp_path / "o" / "age_errors.csv")) == 2


def test_delay_override_changes_result(tmp_path):
    main(["characterize", "--levels", "0", "--out", str(tmp_path / "a")])
    main(["characterize", "--levels", "0", "--delay", "XOR2=3.0", "--out", str(tmp_path / "b")])
    a = report.read_csv(tmp_path / "a" / "delay_sweep.csv")[1]
    b = report.read_csv(tmp_path / "b" / "delay_sweep.csv")[1]
    assert float(b["delay"]) > float(a["delay"])


@pytest.mark.parametrize("argv", [
    ["characterize", "--vdd", "0.2"],
    ["characterize", "--levels", "150"],
    ["characterize", "--delay", "XOR2=abc"],
    ["characterize", "--delay", "MUX=1"],
    ["quantize", "--epochs", "1", "--alpha", "8"],
])
def test_parameter_errors(tmp_path, argv):
    assert main([*argv, "--out", str(tmp_path)]) == 2


def test_argparse_error_exit_code(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["inject", "--p-grid", "x", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_infeasible_exit_code(tmp_path):
    code = main(["select", "--guardband-pct", "-99.9", "--levels", "50", "--vectors", "100", "--epochs", "1",
                 "--out", str(tmp_path)])
    assert code == 3
    assert (tmp_path / "manifest.json").exists()


def test_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["characterize", "--levels", "0", "--out", str(blocker / "sub")]) == 4
    assert main(["rerun", str(tmp_path / "missing.json")]) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "agingquant", "characterize", "--levels", "0",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.split() == [str(tmp_path / "delay_sweep.csv"), str(tmp_path / "normalized_delay.csv")]


def test_fmt():
    assert report.fmt(None) == "" and report.fmt(0.1 + 0.2) == "0.3" and report.fmt(True) == "true"
