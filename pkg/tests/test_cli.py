"""End-to-end harness tests: verbs, artifacts, exit codes, reproducibility."""

import json

import numpy as np
import pytest

from protoset import cli
from protoset.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from protoset.tasks import load_corpus

# tiny but real settings so runs finish in milliseconds
MOG_ARGS = [
    "--set", "count=4",
    "--set", "mog.n_min=30",
    "--set", "mog.n_max=40",
    "--set", "model.encoder_widths=16,8",
    "--set", "model.k=5",
    "--set", "model.head_hidden=8",
    "--set", "train.batch_points=20",
    "--set", "sinkhorn.unroll_iters=8",
]


def run(argv):
    return cli.main(argv)


def train_mog(out, extra=()):
    code = run(["train", "--task", "mog", "--steps", "5", "--seed", "3", "--out", str(out)]
               + MOG_ARGS + list(extra))
    assert code == 0
    return out / "trace.csv", out / "checkpoint.5"


# -- ot: one instance from CSV ------------------------------------------------------


def test_ot_solves_the_permutation_instance(tmp_path, capsys):
    cost = tmp_path / "c.csv"
    cost.write_text("0,1\n1,0\n")
    code = run(
        ["ot", "--cost", str(cost), "--a", "0.5,0.5", "--b", "0.5,0.5",
         "--eps", "0.05", "--out", str(tmp_path / "sol")]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert abs(report["value"]) < 1e-6  # identity-like plan has no moving cost
    assert report["converged"] is True
    plan = np.loadtxt(tmp_path / "sol" / "plan.csv", delimiter=",")
    assert np.allclose(plan, np.diag([0.5, 0.5]), atol=1e-6)
    metrics = json.loads((tmp_path / "sol" / "metrics.json").read_text())
    assert metrics["epsilon"] == 0.05


def test_ot_uniform_marginals_by_default(tmp_path, capsys):
    cost = tmp_path / "c.csv"
    cost.write_text("0,2,1\n2,0,1\n")
    assert run(["ot", "--cost", str(cost), "--eps", "0.5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["value"] >= 0.0


def test_ot_missing_cost_file_exits_3(tmp_path):
    assert run(["ot", "--cost", str(tmp_path / "absent.csv")]) == cli.EXIT_MISSING_FILE


def test_ot_bad_marginals_exit_2(tmp_path):
    cost = tmp_path / "c.csv"
    cost.write_text("0,1\n1,0\n")
    assert run(["ot", "--cost", str(cost), "--a", "0.9,0.9"]) == cli.EXIT_CONFIG
    assert run(["ot", "--cost", str(cost), "--a", "x,y"]) == cli.EXIT_CONFIG


# -- gen ---------------------------------------------------------------------------


def test_gen_writes_corpus_with_embedded_config(tmp_path):
    out = tmp_path / "data"
    code = run(["gen", "--task", "mog", "--components", "3", "--count", "4",
                "--seed", "7", "--out", str(out), "--set", "mog.n_min=30",
                "--set", "mog.n_max=40"])
    assert code == 0
    meta, sets, truths = load_corpus(out / "corpus.jsonl")
    assert meta["seed"] == 7
    assert meta["config"]["mog.components"] == 3
    assert len(sets) == 4
    assert truths[0]["means"] is not None  # ground truth rides along


def test_gen_rerun_is_byte_identical(tmp_path):
    out = tmp_path / "data"
    args = ["gen", "--task", "mog", "--count", "3", "--seed", "1", "--out", str(out),
            "--set", "mog.n_min=30", "--set", "mog.n_max=40"]
    assert run(args) == 0
    first = (out / "corpus.jsonl").read_bytes()
    assert run(args) == 0
    assert (out / "corpus.jsonl").read_bytes() == first


def test_gen_fewshot_has_no_corpus(tmp_path):
    assert run(["gen", "--task", "fewshot", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_gen_unknown_key_exits_2(tmp_path, capsys):
    code = run(["gen", "--task", "mog", "--out", str(tmp_path), "--set", "mog.sprinkles=4"])
    assert code == cli.EXIT_CONFIG
    assert "mog.sprinkles" in capsys.readouterr().err


def test_gen_metagan_corpus_carries_truths(tmp_path):
    out = tmp_path / "g"
    assert run(["gen", "--task", "metagan", "--count", "3", "--seed", "2",
                "--out", str(out), "--set", "metagan.n_points=10"]) == 0
    _, sets, truths = load_corpus(out / "corpus.jsonl")
    assert len(sets) == 3 and sets[0].points.shape == (10, 1)
    assert truths[0]["family"] == "gauss1d"


# -- train -------------------------------------------------------------------------


def test_train_writes_trace_and_checkpoint(tmp_path):
    trace_path, ck_path = train_mog(tmp_path / "run")
    lines = trace_path.read_text().splitlines()
    header = [l for l in lines if l.startswith("# ")]
    assert "# optim.lr = 0.001" in header
    assert "# seed = 3" in header
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "step,transport_loss,task_loss"
    assert len(body) == 6  # header plus five steps
    assert body[1].startswith("0,")
    ck = load_checkpoint(ck_path)
    assert ck.step == 5
    assert ck.meta["task"] == "mog"
    assert ck.meta["bank_space"] == "data-space"
    assert "main" in ck.optimizer and ck.optimizer["main"]["steps"]
    assert any(name == "bank" for name in ck.params)


def test_train_rerun_is_byte_identical(tmp_path, monkeypatch):
    # same relative --out from two different directories: all bytes must match
    for sub in ("first", "second"):
        workdir = tmp_path / sub
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        code = run(["train", "--task", "mog", "--steps", "5", "--seed", "3",
                    "--out", "run"] + MOG_ARGS)
        assert code == 0
    a, b = tmp_path / "first" / "run", tmp_path / "second" / "run"
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    assert (a / "checkpoint.5").read_bytes() == (b / "checkpoint.5").read_bytes()


def test_train_from_corpus_file(tmp_path):
    data = tmp_path / "data"
    assert run(["gen", "--task", "mog", "--count", "4", "--seed", "1", "--out", str(data),
                "--set", "mog.n_min=30", "--set", "mog.n_max=40"]) == 0
    out = tmp_path / "run"
    code = run(["train", "--task", "mog", "--corpus", str(data / "corpus.jsonl"),
                "--steps", "3", "--out", str(out)] + MOG_ARGS)
    assert code == 0
    assert (out / "checkpoint.3").exists()


def test_train_missing_corpus_exits_3(tmp_path):
    code = run(["train", "--task", "mog", "--corpus", str(tmp_path / "nope.jsonl"),
                "--steps", "2", "--out", str(tmp_path / "r")] + MOG_ARGS)
    assert code == cli.EXIT_MISSING_FILE


def test_train_divergence_exits_6(tmp_path):
    with np.errstate(all="ignore"):
        code = run(["train", "--task", "mog", "--steps", "4", "--out", str(tmp_path / "d"),
                    "--set", "optim.lr=1e150"] + MOG_ARGS)
    assert code == cli.EXIT_NUMERIC


def test_train_unsupervised_mode(tmp_path):
    out = tmp_path / "u"
    code = run(["train", "--task", "mog", "--steps", "4", "--out", str(out),
                "--set", "train.mode=unsupervised"] + MOG_ARGS)
    assert code == 0
    body = [l for l in (out / "trace.csv").read_text().splitlines() if not l.startswith("#")]
    step0 = body[1].split(",")
    assert step0[1] != "" and step0[2] == ""  # transport loss only, no task column


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "task = mog\ntrain.steps = 9\ncount = 4\nmog.n_min = 30\nmog.n_max = 40\n"
        "model.encoder_widths = 16,8\nmodel.k = 5\nmodel.head_hidden = 8\n"
        "train.batch_points = 20\nsinkhorn.unroll_iters = 8\n"
    )
    out = tmp_path / "run"
    assert run(["train", "--config", str(cfg), "--steps", "2", "--out", str(out)]) == 0
    assert (out / "checkpoint.2").exists()  # flag beat the file's 9 steps
    header = (out / "trace.csv").read_text()
    assert "# train.steps = 2" in header


# -- eval --------------------------------------------------------------------------


def test_eval_writes_metrics_with_config_and_seed(tmp_path):
    _, ck_path = train_mog(tmp_path / "run")
    out = tmp_path / "ev"
    code = run(["eval", "--checkpoint", str(ck_path), "--count", "3", "--seed", "11",
                "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert payload["task"] == "mog"
    assert payload["seed"] == 11
    assert payload["checkpoint_step"] == 5
    assert payload["config"]["eval.count"] == 3
    assert np.isfinite(payload["metrics"]["mean_loglik"])
    assert np.isfinite(payload["metrics"]["oracle_mean_loglik"])


def test_eval_is_deterministic(tmp_path):
    _, ck_path = train_mog(tmp_path / "run")
    outs = []
    for sub in ("e1", "e2"):
        out = tmp_path / sub
        assert run(["eval", "--checkpoint", str(ck_path), "--count", "3",
                    "--seed", "11", "--out", str(out)]) == 0
        outs.append(json.loads((out / "metrics.json").read_text())["metrics"])
    assert outs[0] == outs[1]


def test_checkpoint_round_trip_preserves_metrics_bit_exact(tmp_path):
    _, ck_path = train_mog(tmp_path / "run")
    ck = load_checkpoint(ck_path)
    copied = tmp_path / "copy.ck"
    save_checkpoint(copied, ck.params, ck.step, ck.config, ck.config_hash,
                    optimizer=ck.optimizer, meta=ck.meta)
    results = []
    for path, sub in ((ck_path, "e1"), (copied, "e2")):
        out = tmp_path / sub
        assert run(["eval", "--checkpoint", str(path), "--count", "3",
                    "--seed", "11", "--out", str(out)]) == 0
        results.append(json.loads((out / "metrics.json").read_text())["metrics"])
    assert results[0] == results[1]


def test_eval_on_explicit_corpus(tmp_path):
    _, ck_path = train_mog(tmp_path / "run")
    data = tmp_path / "data"
    assert run(["gen", "--task", "mog", "--count", "3", "--seed", "9", "--out", str(data),
                "--set", "mog.n_min=30", "--set", "mog.n_max=40"]) == 0
    out = tmp_path / "ev"
    assert run(["eval", "--checkpoint", str(ck_path), "--corpus",
                str(data / "corpus.jsonl"), "--out", str(out)]) == 0
    payload = json.loads((out / "metrics.json").read_text())
    assert "mean_loglik" in payload["metrics"]
    assert "oracle_mean_loglik" not in payload["metrics"]  # provenance unknown


def test_eval_missing_checkpoint_exits_3(tmp_path):
    assert run(["eval", "--checkpoint", str(tmp_path / "none.ck")]) == cli.EXIT_MISSING_FILE


def test_eval_corrupt_checkpoint_exits_4(tmp_path):
    bad = tmp_path / "bad.ck"
    bad.write_text("{broken")
    assert run(["eval", "--checkpoint", str(bad)]) == cli.EXIT_BAD_CHECKPOINT


def test_eval_tampered_config_exits_4(tmp_path):
    _, ck_path = train_mog(tmp_path / "run")
    payload = json.loads(ck_path.read_text())
    payload["config"]["seed"] = 999  # hash no longer matches
    ck_path.write_text(json.dumps(payload))
    assert run(["eval", "--checkpoint", str(ck_path)]) == cli.EXIT_BAD_CHECKPOINT


def test_eval_version_mismatch_exits_5(tmp_path):
    _, ck_path = train_mog(tmp_path / "run")
    payload = json.loads(ck_path.read_text())
    payload["format_version"] = FORMAT_VERSION + 1
    ck_path.write_text(json.dumps(payload))
    assert run(["eval", "--checkpoint", str(ck_path)]) == cli.EXIT_VERSION_MISMATCH


# -- other tasks through the CLI ------------------------------------------------------


def test_digitsum_cli_round_trip(tmp_path):
    out = tmp_path / "run"
    code = run(["train", "--task", "digitsum", "--steps", "4", "--out", str(out),
                "--set", "count=6", "--set", "model.encoder_widths=16,8",
                "--set", "model.k=5", "--set", "model.head_hidden=8",
                "--set", "train.batch_points=8", "--set", "sinkhorn.unroll_iters=8"])
    assert code == 0
    ev = tmp_path / "ev"
    assert run(["eval", "--checkpoint", str(out / "checkpoint.4"), "--count", "2",
                "--out", str(ev), "--set", "digitsum.test_sizes=4,8"]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())["metrics"]
    assert set(metrics["accuracy_by_size"]) == {"4", "8"}


def test_pointset_cli_round_trip(tmp_path):
    out = tmp_path / "run"
    code = run(["train", "--task", "pointset", "--steps", "4", "--out", str(out),
                "--set", "pointset.count_per_class=1", "--set", "model.encoder_widths=16,8",
                "--set", "model.k=5", "--set", "model.head_hidden=8",
                "--set", "train.batch_points=16", "--set", "sinkhorn.unroll_iters=8"])
    assert code == 0
    ev = tmp_path / "ev"
    assert run(["eval", "--checkpoint", str(out / "checkpoint.4"), "--count", "1",
                "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())["metrics"]
    assert 0.0 <= metrics["accuracy"] <= 1.0


def test_fewshot_cli_round_trip(tmp_path):
    out = tmp_path / "run"
    code = run(["train", "--task", "fewshot", "--out", str(out), "--seed", "1",
                "--lambda-ot", "0.3",
                "--set", "fewshot.episodes=10", "--set", "fewshot.encoder_widths=12,6",
                "--set", "fewshot.bank=4", "--set", "fewshot.n_base=10",
                "--set", "fewshot.n_novel=6", "--set", "sinkhorn.unroll_iters=6"])
    assert code == 0
    ev = tmp_path / "ev"
    assert run(["eval", "--checkpoint", str(out / "checkpoint.10"), "--count", "5",
                "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())["metrics"]
    assert metrics["n_episodes"] == 5
    assert 0.0 <= metrics["mean_accuracy"] <= 1.0


def test_metagan_cli_round_trip(tmp_path):
    out = tmp_path / "run"
    code = run(["train", "--task", "metagan", "--out", str(out), "--seed", "1",
                "--set", "count=5", "--set", "metagan.iterations=6",
                "--set", "metagan.batch=10", "--set", "metagan.n_points=12",
                "--set", "metagan.summary_widths=10,8",
                "--set", "metagan.generator_widths=12,10",
                "--set", "metagan.critic_widths=12,10",
                "--set", "train.batch_points=10", "--set", "sinkhorn.unroll_iters=6"])
    assert code == 0
    body = [l for l in (out / "trace.csv").read_text().splitlines() if not l.startswith("#")]
    assert body[0] == "step,critic_loss,generator_loss,transport_loss"
    ck = load_checkpoint(out / "checkpoint.6")
    assert {"critic", "generator", "transport"} <= set(ck.optimizer)
    assert any(n.startswith("summary.") for n in ck.params)
    ev = tmp_path / "ev"
    assert run(["eval", "--checkpoint", str(out / "checkpoint.6"), "--count", "2",
                "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())["metrics"]
    assert metrics["n_tasks"] == 2


# -- gradcheck -----------------------------------------------------------------------


def test_gradcheck_mog_reports_small_error(capsys):
    code = run(["gradcheck", "--task", "mog", "--seed", "1"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["max_rel_err"] < 1e-4


@pytest.mark.parametrize("task", ["digitsum", "pointset", "fewshot", "metagan"])
def test_gradcheck_other_tasks_pass(task, capsys):
    assert run(["gradcheck", "--task", task, "--seed", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["max_rel_err"] < 1e-4


# -- argument handling ----------------------------------------------------------------


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "gradcheck" in capsys.readouterr().out


def test_unknown_verb_exits_2(capsys):
    assert run(["explode"]) == cli.EXIT_CONFIG


def test_malformed_set_pair_exits_2(tmp_path, capsys):
    code = run(["gen", "--task", "mog", "--out", str(tmp_path), "--set", "epsilon"])
    assert code == cli.EXIT_CONFIG
    assert "key=value" in capsys.readouterr().err
