import hashlib
from pathlib import Path

import numpy as np
import pytest

from lc4sv import cli
from lc4sv.config import load_config
from lc4sv.errors import ConfigurationError
from lc4sv.evaluation import default_conditions, parse_report
from lc4sv.pipeline import STAGES, read_run_log, run_stage
from lc4sv.signal import Waveform, read_wav, write_wav

TINY = Path(__file__).resolve().parents[1] / "configs" / "tiny.conf"


def tree_digest(path: Path) -> dict:
    return {str(p.relative_to(path)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = load_config(TINY).replace(work_dir=str(tmp_path_factory.mktemp("run")))
    dirs = {s: run_stage(s, cfg) for s in STAGES[:-1]}
    return cfg, dirs


def test_report_has_every_condition(tiny_run):
    cfg, dirs = tiny_run
    rows = parse_report((dirs["eval"] / "report.tsv").read_text())
    assert list(rows) == default_conditions()
    assert len({r["num_trials"] for r in rows.values()}) == 1
    for c in default_conditions():
        assert (dirs["eval"] / "scores" / f"{c}.tsv").exists()
    log = read_run_log(dirs["eval"] / "run.log")
    assert log["config_hash"] == cfg.digest() and log["seed"] == str(cfg.seed)


def test_stage_dirs_are_content_addressed(tiny_run):
    cfg, dirs = tiny_run
    for stage, d in dirs.items():
        assert d.name == f"{stage}-{cfg.digest()}"
    leftovers = [p for p in Path(cfg.work_dir).iterdir() if p.name.startswith(".")]
    assert leftovers == []


def test_rerun_is_byte_identical(tiny_run):
    cfg, dirs = tiny_run
    for stage in STAGES[:-1]:
        before = tree_digest(dirs[stage])
        run_stage(stage, cfg)
        assert tree_digest(dirs[stage]) == before, stage


def test_missing_prerequisite_names_the_file(tmp_path):
    cfg = load_config(TINY).replace(work_dir=str(tmp_path))
    with pytest.raises(ConfigurationError, match="mix-"):
        run_stage("finetune-se", cfg)
    assert not any(tmp_path.iterdir()) or all(not p.name.startswith(".") for p in tmp_path.iterdir())


def test_unknown_stage():
    with pytest.raises(ConfigurationError):
        run_stage("deploy", load_config(TINY))


def _write_cfg(tmp_path, cfg_dir):
    text = TINY.read_text().replace("work_dir = runs/tiny", f"work_dir = {cfg_dir}")
    path = tmp_path / "c.conf"
    path.write_text(text)
    return path


def test_cli_process_prints_alpha(tiny_run, tmp_path, capsys):
    cfg, dirs = tiny_run
    conf = _write_cfg(tmp_path, cfg.work_dir)
    x = np.random.default_rng(0).standard_normal(16000).astype(np.float32) * 0.1
    write_wav(Waveform(x), tmp_path / "x.wav", encoding="float32")
    code = cli.main(["process", "--config", str(conf), "--in", str(tmp_path / "x.wav"),
                     "--out", str(tmp_path / "y.wav")])
    assert code == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith("alpha = ")
    alpha = float(out.split("=")[1])
    assert alpha in [round(0.1 * i, 1) for i in range(11)]
    assert read_wav(tmp_path / "y.wav").samples.shape == x.shape


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["eval", "--config", str(tmp_path / "missing.conf")]) == 1
    assert cli.main(["bogus-stage"]) == 1
    conf = _write_cfg(tmp_path, tmp_path / "empty")
    assert cli.main(["train-agent", "--config", str(conf)]) == 1
    (tmp_path / "bad.conf").write_text("pretrain_learning_rate = 0\n")
    assert cli.main(["mix", "--config", str(tmp_path / "bad.conf")]) == 1


def test_cli_runtime_error_exit_code(tiny_run, tmp_path):
    cfg, _ = tiny_run
    conf = _write_cfg(tmp_path, cfg.work_dir)
    (tmp_path / "broken.wav").write_bytes(b"RIFF0000WAVEjunk")
    code = cli.main(["process", "--config", str(conf), "--in", str(tmp_path / "broken.wav"),
                     "--out", str(tmp_path / "o.wav")])
    assert code == 2


def test_seed_override_changes_hash(tmp_path, capsys):
    conf = _write_cfg(tmp_path, tmp_path / "w")
    assert cli.main(["mix", "--config", str(conf), "--seed", "3"]) == 0
    path = Path(capsys.readouterr().out.strip())
    assert path.name == f"mix-{load_config(conf).replace(seed=3).digest()}"


def test_thread_count_from_environment(tiny_run, monkeypatch):
    cfg, dirs = tiny_run
    before = (dirs["eval"] / "report.tsv").read_bytes()
    monkeypatch.setenv("LC4SV_THREADS", "3")
    run_stage("eval", cfg)
    assert (dirs["eval"] / "report.tsv").read_bytes() == before
    monkeypatch.setenv("LC4SV_THREADS", "zero")
    with pytest.raises(ConfigurationError):
        run_stage("eval", cfg)
