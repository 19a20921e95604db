# test_run_files.py
from pathlib import Path

import numpy as np
import pytest

import storage
import transformer_lm as lm
from checkpoint import MAGIC, load_checkpoint, save_checkpoint
from cli import compare_runs
from errors import InvalidConfig, IoFailure, MissingRuns, NonFiniteValue
from metrics import MetricsLog, SeedResult, TrainingTelemetry, build_report, final_eval, read_metrics, relative_seed_range
from run_config import load_run_config, parse_dotted, run_config_from_mapping, run_dir


# -----------------------------
# Run config
# -----------------------------
def test_parse_dotted():
    fields = parse_dotted("# header\nname = desk  # inline\n\nmodel.d_model=64\nname = again\n")
    assert fields == {"name": "again", "model.d_model": "64"}
    with pytest.raises(InvalidConfig):
        parse_dotted("no equals sign here")


def test_run_config_sections_and_aliases():
    config = run_config_from_mapping({
        "name": "desk",
        "seeds": "3, 4",
        "variants": "fixed, affine",
        "model.input_kind": "affine",
        "recoder.seed": "7",
        "train.total_steps": "10",
        "train.lr": "0.002",
        "train.eval_every": "4",
    })
    assert config.input_kind == "affine_recoded"
    assert config.seeds == [3, 4]
    assert config.variants == ["fixed_code", "affine_recoded"]
    assert config.train.optim.lr == 0.002
    assert config.train.eval_steps() == [4, 8, 10]
    assert run_dir(config, 3, "out").as_posix() == "out/desk/affine_recoded/seed-3"


@pytest.mark.parametrize(
    "fields",
    [
        {"model.input_kind": "affine"},
        {"seeds": ""},
        {"recoder.matrix": "10,01"},
        {"data.val_fraction": "1.5"},
        {"model.n_layers": "four"},
    ],
)
def test_invalid_run_configs(fields):
    with pytest.raises(InvalidConfig):
        run_config_from_mapping(fields)


def test_load_run_config_resolves_corpus_relative_to_file(tmp_path):
    conf = tmp_path / "configs" / "x.conf"
    conf.parent.mkdir()
    conf.write_text("data.corpus = ../corpora/x.txt\n")
    config = load_run_config(conf, {"train.total_steps": "5", "data.batch_size": None})
    assert config.data.corpus == str(conf.parent / "../corpora/x.txt")
    assert config.train.total_steps == 5
    with pytest.raises(IoFailure):
        load_run_config(tmp_path / "missing.conf")


def test_shipped_configs_load():
    configs = Path(__file__).resolve().parent / "configs"
    desk = load_run_config(configs / "desk_scale.conf")
    assert desk.seeds == [0, 1, 2] and len(desk.variants) == 3
    # about 0.2 s per step of 8 x 128 tokens keeps nine runs inside two hours
    tokens_per_run = desk.train.total_steps * desk.data.batch_size * desk.model.context_len
    assert tokens_per_run == 2_048_000

    memorize = load_run_config(configs / "memorize.conf")
    assert memorize.data.val_corpus == memorize.data.corpus
    assert Path(memorize.data.corpus).exists()

    full = load_run_config(configs / "full_scale.conf")
    assert lm.parameter_census(full.model.model_copy(update={"input_kind": "learned"})) - lm.parameter_census(full.model) == 67_108_864


# -----------------------------
# Checkpoints
# -----------------------------
def test_checkpoint_round_trip(tmp_path, tiny_config):
    config = tiny_config("affine_recoded")
    params = lm.init_model(config, seed=5)
    interface = lm.build_interface(config, recoder_seed=7)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, params, interface, seed=5, step=12, tokens_seen=384)
    assert path.read_bytes().startswith(MAGIC)

    ckpt = load_checkpoint(path)
    assert (ckpt.seed, ckpt.step, ckpt.tokens_seen) == (5, 12, 384)
    assert ckpt.config == config
    assert ckpt.code_spec == interface.spec
    for name, arr in params.arrays.items():
        assert ckpt.params.arrays[name].tobytes() == arr.tobytes()
    tokens = np.arange(16)[None, :]
    restored = ckpt.interface()
    assert isinstance(restored, lm.AffineRecoded)
    assert np.array_equal(lm.forward(params, interface, tokens).data, lm.forward(ckpt.params, restored, tokens).data)

    again = tmp_path / "again.bin"
    save_checkpoint(again, ckpt.params, restored, seed=5, step=12, tokens_seen=384)
    assert again.read_bytes() == path.read_bytes()


def test_learned_checkpoint_has_no_code_spec(tmp_path, tiny_config):
    config = tiny_config("learned")
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, lm.init_model(config, seed=0), lm.build_interface(config), seed=0, step=0)
    ckpt = load_checkpoint(path)
    assert ckpt.code_spec is None
    assert isinstance(ckpt.interface(), lm.LearnedTable)


def test_checkpoint_failures(tmp_path, tiny_config):
    config = tiny_config("fixed_code")
    params = lm.init_model(config, seed=0)
    interface = lm.build_interface(config)
    path = tmp_path / "ckpt.bin"

    bad = params.copy()
    bad.arrays["head.w"][0, 0] = np.inf
    with pytest.raises(NonFiniteValue):
        save_checkpoint(path, bad, interface, seed=0, step=1)
    assert not path.exists()

    save_checkpoint(path, params, interface, seed=0, step=1)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(IoFailure):
        load_checkpoint(path)
    (tmp_path / "other.bin").write_bytes(b"not a checkpoint\n")
    with pytest.raises(IoFailure):
        load_checkpoint(tmp_path / "other.bin")


# -----------------------------
# Metrics and report
# -----------------------------
def test_metrics_log_and_telemetry(tmp_path):
    with MetricsLog(tmp_path / "m.jsonl") as log:
        log.log_step(1, 32, 5.5, 1e-4, 2.0)
        log.log_eval(1, 32, 5.4, 221.4)
    records = read_metrics(tmp_path / "m.jsonl")
    assert [r["kind"] for r in records] == ["train", "eval"]
    assert final_eval(records)["val_loss"] == 5.4
    assert final_eval(records[:1]) is None

    telemetry = TrainingTelemetry("fixed_code", 0)
    telemetry.observe_step(32, {"loss": 5.5, "lr": 1e-4, "grad_norm": 2.0}, 0.01)
    telemetry.observe_eval(5.4, 221.4)
    telemetry.write(tmp_path / "m.prom")
    prom = (tmp_path / "m.prom").read_text()
    assert 'train_tokens_total{input_kind="fixed_code",seed="0"} 32.0' in prom
    assert "val_perplexity" in prom


def test_relative_seed_range():
    assert relative_seed_range([2.3, 2.4, 2.5]) == pytest.approx(0.0833, abs=1e-4)
    assert relative_seed_range([2.4]) == 0.0


def test_report_arithmetic():
    report = build_report("x", {
        "learned": [SeedResult(s, 0.0, p, 1000) for s, p in enumerate([2.3, 2.4, 2.5])],
        "fixed_code": [SeedResult(s, 0.0, p, 1000) for s, p in enumerate([2.32, 2.33, 2.334])],
    })
    learned = report.variant("learned")
    assert learned.mean_val_ppl == pytest.approx(2.4)
    assert learned.rel_seed_range == pytest.approx(0.0833, abs=1e-4)
    assert report.relative_change("fixed_code") == pytest.approx(-0.03, abs=1e-3)
    assert report.warnings == []
    text = report.render()
    assert "8.33%" in text and "-3.00%" in text
    assert "2.44" in text  # reference line


def test_single_seed_warns():
    report = build_report("x", {"learned": [SeedResult(0, 1.0, 2.7, 100)]})
    assert report.variant("learned").rel_seed_range == 0.0
    assert len(report.warnings) == 1


# -----------------------------
# Registry
# -----------------------------
def _register(db, tmp_path, kind, seed, ppl, experiment="synthetic"):
    metrics_path = tmp_path / f"{kind}-{seed}.jsonl"
    with MetricsLog(metrics_path) as log:
        log.log_step(1, 100, 1.0, 1e-3, 1.0)
        log.log_eval(1, 100, float(np.log(ppl)), ppl)
    return storage.store_run(
        {"experiment": experiment, "input_kind": kind, "seed": seed, "run_dir": str(tmp_path),
         "metrics_path": str(metrics_path), "total_steps": 1, "tokens_seen": 100, "val_ppl": ppl},
        db,
    )


def test_registry_keeps_latest_run(tmp_path):
    db = tmp_path / "runs.db"
    storage.init_db(db)
    storage.init_db(db)  # migrations are idempotent
    first = _register(db, tmp_path, "learned", 0, 3.0)
    second = _register(db, tmp_path, "learned", 0, 2.9)
    assert second > first
    latest = storage.latest_train_runs("synthetic", db)
    assert latest[("learned", 0)]["id"] == second
    assert storage.query_runs(input_kind="learned", db_path=db)[0]["id"] == second
    assert storage.get_experiments(db)[0]["run_count"] == 2


def test_compare_reads_registry(tmp_path):
    db = tmp_path / "runs.db"
    storage.init_db(db)
    for seed, ppl in enumerate([2.3, 2.4, 2.5]):
        _register(db, tmp_path, "learned", seed, ppl)
        _register(db, tmp_path, "fixed_code", seed, ppl - 0.05)
    config = run_config_from_mapping({"name": "synthetic", "seeds": "0,1,2", "variants": "learned,fixed"})
    report = compare_runs(config, db)
    assert report.variant("learned").mean_val_ppl == pytest.approx(2.4)
    assert report.variant("learned").rel_seed_range == pytest.approx(0.0833, abs=1e-4)
    assert report.variant("fixed_code").tokens_per_seed == 100

    wider = run_config_from_mapping({"name": "synthetic", "seeds": "0,1,2,3", "variants": "learned"})
    with pytest.raises(MissingRuns):
        compare_runs(wider, db)
