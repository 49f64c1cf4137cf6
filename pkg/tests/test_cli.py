"""End-to-end command line coverage over a small generated workspace."""

import json
from pathlib import Path

import pytest

from docmil.cli import _LOSS_FLAG, _load_config, build_parser, main
from docmil.pipeline import AdapterSpec, PipelineConfig, SplitChoice
from docmil.training import TrainConfig

SYNTH = dict(n_docs=10, pages_per_doc=6, n_concepts=30, dim=24, signal_dim=6,
             write_rasters=True, raster_side=8)


def write_config(ws: Path, **over) -> Path:
    cfg = PipelineConfig(
        corpus_dir=str(ws / "corpus"),
        output_dir=str(ws / "out"),
        image_store=str(ws / "images.emb"),
        text_store=str(ws / "texts.emb"),
        **over,
    )
    cfg.synth = type(cfg.synth)(**SYNTH)
    cfg.train = TrainConfig(epochs=3, batch_size=32)
    path = ws / "config.json"
    path.write_bytes(cfg.to_json())
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Run every stage once through the real entry point."""
    ws = tmp_path_factory.mktemp("cliws")
    config = write_config(ws, adapter=AdapterSpec(rank=4))

    stages = ["synth", "ingest", "merge", "bag", "dedup", "split",
              "train", "eval", "report"]
    for stage in stages:
        argv = [stage, "--config", str(config)]
        if stage == "train":
            argv += ["--loss", "mil-nce"]
        code = main(argv)
        assert code == 0, stage
    return ws, config


def test_pipeline_artifacts_exist(workspace):
    ws, _ = workspace
    out = ws / "out"
    assert len(list((out / "layout").glob("*.json"))) == 10
    assert len(list((out / "merged").glob("*.json"))) == 10
    assert len(list((out / "bags").glob("*.json"))) == 10
    assert len(list((out / "bags_merged").glob("*.json"))) == 10
    assert (out / "split.json").is_file()
    assert (out / "adapter.ckpt").is_file()
    assert (out / "train_log.jsonl").is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["overall"]["n_manufacturers"] == 2
    assert (out / "report.csv").read_text().startswith("doc_id,direction,k,recall")


def test_report_prints_table(workspace, capsys):
    _, config = workspace
    assert main(["report", "--config", str(config)]) == 0
    shown = capsys.readouterr().out
    assert "OVERALL" in shown
    assert "acme" in shown and "zephyr" in shown


def test_stage_info_line_is_json(workspace, capsys):
    _, config = workspace
    assert main(["split", "--config", str(config)]) == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["dry_run"] is False
    assert info["train"] + info["test"] == 10
    assert info["artifacts"] == ["split.json"]


def test_train_log_is_jsonl(workspace):
    ws, _ = workspace
    lines = (ws / "out" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 3
    for line in lines:
        entry = json.loads(line)
        assert set(entry) >= {"epoch", "mean_loss", "sigma"}


def test_dry_run_writes_nothing(workspace, tmp_path, capsys):
    ws, config = workspace
    cfg = PipelineConfig.from_json(Path(config).read_bytes())
    cfg.output_dir = str(tmp_path / "dryout")
    dry_config = tmp_path / "config.json"
    dry_config.write_bytes(cfg.to_json())
    assert main(["ingest", "--config", str(dry_config), "--dry-run"]) == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["dry_run"] is True
    assert info["documents"] == 10
    assert not (tmp_path / "dryout").exists()


def test_eval_without_split_fails_cleanly(tmp_path, capsys):
    config = write_config(tmp_path)
    code = main(["eval", "--config", str(config)])
    err = capsys.readouterr().err
    assert code == 2
    assert err.startswith("MissingArtifact:")


def test_missing_config_file(tmp_path, capsys):
    code = main(["ingest", "--config", str(tmp_path / "absent.json")])
    assert code == 2
    assert "config file not found" in capsys.readouterr().err


def test_unknown_config_field_rejected(tmp_path, capsys):
    bad = tmp_path / "config.json"
    bad.write_text(json.dumps({"corpus_dir": "c", "mystery_knob": 3}))
    code = main(["ingest", "--config", str(bad)])
    assert code == 2
    assert capsys.readouterr().err.startswith("ConfigError:")


def test_config_json_round_trip(tmp_path):
    config = write_config(tmp_path)
    cfg = PipelineConfig.from_json(config.read_bytes())
    again = PipelineConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.synth.manufacturers == ("acme", "zephyr")


def test_parser_requires_a_stage(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["polish"])


def test_flag_overrides_reach_the_config(tmp_path):
    config = write_config(tmp_path, split=SplitChoice("all_data", None, 1))
    parser = build_parser()
    args = parser.parse_args([
        "train", "--config", str(config), "--seed", "9", "--loss", "mil-max",
        "--lock", "star", "--rank", "16", "--prefilter", "on",
    ])
    cfg = _load_config(args)
    assert cfg.seed == 9
    assert cfg.train.seed == 9 and cfg.synth.seed == 9
    assert cfg.loss.kind == "mil_max"
    assert cfg.adapter.lock == "star" and cfg.adapter.rank == 16
    assert cfg.dedup.use_feature_prefilter is True
    assert cfg.split.index == 1


def test_loss_flag_table_covers_all_kinds():
    assert sorted(_LOSS_FLAG.values()) == [
        "choose_one", "clip", "mil_max", "mil_nce", "mil_softmax"]
