"""Command line harness: generate corpora, train, evaluate, solve, gradcheck.

Five verbs share one flat configuration schema (see config.py).  Every
artifact embeds the resolved configuration and seed that produced it, file
names are fixed (corpus.jsonl, trace.csv, metrics.json, checkpoint.<step>),
and nothing written depends on wall-clock time, so a rerun with the same
configuration reproduces artifacts byte for byte.

Exit codes: 0 success, 1 unexpected error, 2 bad configuration or input,
3 missing file, 4 corrupt checkpoint, 5 checkpoint format mismatch,
6 numerical failure (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import (
    Checkpoint,
    assign_parameters,
    load_checkpoint,
    optimizer_state,
    save_checkpoint,
)
from .config import (
    ResolvedConfig,
    config_from_json_dict,
    read_config_file,
    resolve_config,
    schema_help,
)
from .diffcore import Value, check_gradients, no_grad
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    NumericalError,
    ProtosetError,
    TrainingDivergedError,
)
from .fewshot import (
    EpisodeSpec,
    FewShotConfig,
    FewShotModel,
    episode_objective,
    eval_fewshot,
    gen_episodes,
    train_fewshot,
)
from .metagan import (
    GanConfig,
    MetaGan,
    TaskFamilySpec,
    critic_loss,
    discriminator_logit,
    eval_generative,
    gen_task_corpus,
    generator_forward,
    generator_loss,
    train_metagan,
)
from .ot import Marginals, SinkhornConfig, entropic_objective, sinkhorn, transport_cost
from .ot.marginals import uniform_weights
from .protolearn import (
    PrototypeBank,
    TrainConfig,
    train_supervised,
    train_unsupervised,
    transport_objective,
)
from .summarynet import SetBatch, SummaryNet, SummaryNetConfig
from .tasks import (
    DigitSumSpec,
    MoGTaskSpec,
    PointSetClassSpec,
    digit_sum_accuracy,
    digit_sum_loss,
    gen_digit_corpus,
    gen_digit_test_corpora,
    gen_mog_corpus,
    gen_pointset_corpus,
    load_corpus,
    mog_task_loss,
    save_corpus,
    xent_loss,
)
from .tasks.mog import eval_mog_loglik, head_width, oracle_mean_loglik
from .tasks.pointset import POINTSET_CLASSES

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CHECKPOINT = 4
EXIT_VERSION_MISMATCH = 5
EXIT_NUMERIC = 6

GRADCHECK_THRESHOLD = 1e-4

INPUT_DIMS = {"mog": 2, "digitsum": 10, "pointset": 3}


# ---------------------------------------------------------------------------
# configuration plumbing


def _override_strings(args, flag_map: dict) -> dict:
    """Raw override strings from --set pairs and dedicated flags (flags win)."""
    overrides: dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    for dest, key in flag_map.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = str(value)
    return overrides


def _resolve(args, flag_map: dict) -> ResolvedConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else None
    return resolve_config(file_values, _override_strings(args, flag_map))


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _write_trace(path: Path, cfg: ResolvedConfig, columns, rows) -> None:
    lines = cfg.header_lines()
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(str(row[0]) if i == 0 else _fmt(v) for i, v in enumerate(row)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _json_default(value):
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _write_metrics(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# builders shared by train and eval


def _sinkhorn_config(cfg: ResolvedConfig) -> SinkhornConfig:
    return SinkhornConfig(
        epsilon=cfg["sinkhorn.epsilon"],
        tol=cfg["sinkhorn.tol"],
        max_iters=cfg["sinkhorn.max_iters"],
        unroll_iters=cfg["sinkhorn.unroll_iters"],
        grad_mode=cfg["sinkhorn.grad_mode"],
    )


def _train_config(cfg: ResolvedConfig, metric=None, lambda_ot="config") -> TrainConfig:
    return TrainConfig(
        steps=cfg["train.steps"],
        lr=cfg["optim.lr"],
        lr_final=cfg["optim.lr_final"],
        optimizer=cfg["optim.kind"],
        batch_sets=cfg["train.batch_sets"],
        batch_points=cfg["train.batch_points"],
        metric=cfg["train.metric"] if metric is None else metric,
        lambda_ot=cfg["train.lambda_ot"] if lambda_ot == "config" else lambda_ot,
        sinkhorn=_sinkhorn_config(cfg),
        seed=cfg["seed"],
        log_every=cfg["train.log_every"],
    )


def _summary_config(cfg: ResolvedConfig, input_dim: int, output_dim) -> SummaryNetConfig:
    predict = cfg["model.predict_hidden"] or None
    return SummaryNetConfig(
        input_dim=input_dim,
        n_prototypes=cfg["model.k"],
        encoder_widths=cfg["model.encoder_widths"],
        activation=cfg["model.activation"],
        pooling=cfg["model.pooling"],
        head_hidden=cfg["model.head_hidden"],
        output_dim=output_dim,
        predict_hidden=predict,
    )


def _mog_spec(cfg: ResolvedConfig) -> MoGTaskSpec:
    return MoGTaskSpec(
        components=cfg["mog.components"],
        n_min=cfg["mog.n_min"],
        n_max=cfg["mog.n_max"],
        mean_low=cfg["mog.mean_low"],
        mean_high=cfg["mog.mean_high"],
        sigma=cfg["mog.sigma"],
    )


def _digit_spec(cfg: ResolvedConfig, train_count=None, test_count=None) -> DigitSumSpec:
    return DigitSumSpec(
        max_train_size=cfg["digitsum.max_train_size"],
        test_sizes=cfg["digitsum.test_sizes"],
        noise_sigma=cfg["digitsum.noise_sigma"],
        train_count=train_count if train_count is not None else cfg["count"],
        test_count_per_size=test_count if test_count is not None else 200,
    )


def _pointset_spec(cfg: ResolvedConfig, count_per_class=None) -> PointSetClassSpec:
    return PointSetClassSpec(
        n_points=cfg["pointset.n_points"],
        noise_sigma=cfg["pointset.noise_sigma"],
        count_per_class=(
            count_per_class if count_per_class is not None else cfg["pointset.count_per_class"]
        ),
        rotate=cfg["pointset.rotate"],
    )


def _fewshot_config(cfg: ResolvedConfig) -> FewShotConfig:
    episode = EpisodeSpec(
        n_way=cfg["fewshot.n_way"],
        k_shot=cfg["fewshot.k_shot"],
        q_queries=cfg["fewshot.q_queries"],
        dim=cfg["fewshot.dim"],
    )
    return FewShotConfig(
        episode=episode,
        encoder_widths=cfg["fewshot.encoder_widths"],
        g_hidden=cfg["fewshot.g_hidden"] or None,
        bank_size=cfg["fewshot.bank"],
        lambda_ot=cfg["train.lambda_ot"],
        activation=cfg["fewshot.activation"],
        metric=cfg["fewshot.metric"],
        sinkhorn=_sinkhorn_config(cfg),
        episodes=cfg["fewshot.episodes"],
        lr=cfg["optim.lr"],
        lr_final=cfg["optim.lr_final"],
        optimizer=cfg["optim.kind"],
        mean_low=cfg["fewshot.mean_low"],
        mean_high=cfg["fewshot.mean_high"],
        sigma=cfg["fewshot.sigma"],
        n_base_classes=cfg["fewshot.n_base"],
        n_novel_classes=cfg["fewshot.n_novel"],
        class_seed=cfg["fewshot.class_seed"],
        seed=cfg["seed"],
        log_every=cfg["train.log_every"],
    )


def _family_spec(cfg: ResolvedConfig) -> TaskFamilySpec:
    return TaskFamilySpec(
        family=cfg["metagan.family"],
        n_points=cfg["metagan.n_points"] or None,
        n_sets=cfg["count"],
    )


def _gan_config(cfg: ResolvedConfig) -> GanConfig:
    ot = None
    if cfg["metagan.use_ot"]:
        ot = TrainConfig(
            lr=cfg["optim.lr"],
            optimizer=cfg["optim.kind"],
            batch_points=cfg["train.batch_points"],
            metric=cfg["metagan.metric"],
            sinkhorn=_sinkhorn_config(cfg),
        )
    return GanConfig(
        noise_dim=cfg["metagan.noise_dim"],
        eta_critic=cfg["metagan.eta_critic"],
        generator_widths=cfg["metagan.generator_widths"],
        critic_widths=cfg["metagan.critic_widths"],
        conditioning=cfg["metagan.conditioning"],
        batch=cfg["metagan.batch"],
        iterations=cfg["metagan.iterations"],
        lr_generator=cfg["metagan.lr_generator"],
        lr_critic=cfg["metagan.lr_critic"],
        non_saturating=cfg["metagan.non_saturating"],
        mse_weight=cfg["metagan.mse_weight"],
        ot=ot,
        seed=cfg["seed"],
        log_every=cfg["train.log_every"],
    )


def _gan_summary(cfg: ResolvedConfig, dim: int, rng) -> SummaryNet:
    summary_cfg = SummaryNetConfig(
        input_dim=dim,
        n_prototypes=cfg["metagan.k"],
        encoder_widths=cfg["metagan.summary_widths"],
    )
    return SummaryNet(summary_cfg, rng)


def _zero_bank(dim: int, k: int, space: str) -> PrototypeBank:
    # shape-only shell; eval overwrites the columns from the checkpoint
    return PrototypeBank(Value(np.zeros((dim, k)), requires_grad=True), space)


def _data_bank(sets, k: int, rng) -> PrototypeBank:
    pool = np.vstack([batch.points for batch in sets[: min(len(sets), 64)]])
    return PrototypeBank.from_points(pool, k, rng, space="data-space")


def _load_sets(path):
    _, sets, truths = load_corpus(path)
    return sets, truths


def _encoder_task(task: str, cfg: ResolvedConfig):
    """(input_dim, output_dim, loss_fn) for the three encoder tasks."""
    if task == "mog":
        return 2, head_width(cfg["mog.components"]), mog_task_loss
    if task == "digitsum":
        return 10, 1, digit_sum_loss
    if task == "pointset":
        return 3, len(POINTSET_CLASSES), xent_loss
    raise ConfigError(f"no encoder task named {task!r}")


def _gen_sets(task: str, cfg: ResolvedConfig, count: int, seed: int):
    """In-process corpus: (sets, truth dicts or None)."""
    if task == "mog":
        pairs = gen_mog_corpus(_mog_spec(cfg), count, seed)
        return [s for s, _ in pairs], [p.to_dict() for _, p in pairs]
    if task == "digitsum":
        size = cfg["digitsum.size"]
        if size:
            spec = DigitSumSpec(
                max_train_size=cfg["digitsum.max_train_size"],
                test_sizes=(size,),
                noise_sigma=cfg["digitsum.noise_sigma"],
                test_count_per_size=count,
            )
            return gen_digit_test_corpora(spec, seed)[size], None
        return gen_digit_corpus(_digit_spec(cfg, train_count=count), seed), None
    if task == "pointset":
        sets = gen_pointset_corpus(_pointset_spec(cfg), seed)
        return sets, None
    if task == "metagan":
        pairs = gen_task_corpus(_family_spec(cfg), count=count, seed=seed)
        return [s for s, _ in pairs], [p for _, p in pairs]
    raise ConfigError(f"gen does not support task {task!r}")


def _training_sets(task: str, cfg: ResolvedConfig):
    if cfg["corpus"]:
        sets, _ = _load_sets(cfg["corpus"])
        if not sets:
            raise ConfigError(f"corpus {cfg['corpus']!r} holds no sets")
        return sets
    sets, _ = _gen_sets(task, cfg, cfg["count"], cfg["seed"])
    return sets


# ---------------------------------------------------------------------------
# verb: gen


def cmd_gen(args) -> int:
    cfg = _resolve(
        args,
        {"task": "task", "count": "count", "seed": "seed", "out": "out", "components": "mog.components"},
    )
    task = cfg["task"]
    if task == "fewshot":
        raise ConfigError(
            "fewshot episodes are generated on the fly from the seed; there is no corpus to write"
        )
    sets, truths = _gen_sets(task, cfg, cfg["count"], cfg["seed"])
    out = Path(cfg["out"])
    path = out / "corpus.jsonl"
    meta = {"task": task, "seed": cfg["seed"], "config": cfg.as_dict()}
    save_corpus(path, sets, meta=meta, truths=truths)
    print(f"wrote {len(sets)} sets to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verb: train


def _train_encoder(task: str, cfg: ResolvedConfig):
    input_dim, output_dim, loss_fn = _encoder_task(task, cfg)
    sets = _training_sets(task, cfg)
    mode = cfg["train.mode"]
    net = SummaryNet(
        _summary_config(cfg, input_dim, None if mode == "unsupervised" else output_dim),
        np.random.default_rng(cfg["seed"]),
    )
    bank = _data_bank(sets, cfg["model.k"], np.random.default_rng(cfg["seed"] + 1))
    tc = _train_config(cfg)
    if mode == "unsupervised":
        trace = train_unsupervised(sets, net, bank, tc)
    else:
        trace = train_supervised(sets, net, bank, loss_fn, tc)
    named = net.named_parameters()
    named["bank"] = bank.matrix
    columns = ("step", "transport_loss", "task_loss")
    rows = list(zip(trace.steps, trace.ot_losses, trace.task_losses))
    return columns, rows, named, trace.optimizers, {"bank_space": bank.space}


def _train_fewshot_task(cfg: ResolvedConfig):
    fs_cfg = _fewshot_config(cfg)
    model = FewShotModel(fs_cfg, np.random.default_rng(cfg["seed"]))
    trace = train_fewshot(model, fs_cfg)
    columns = ("step", "transport_loss", "task_loss")
    rows = list(zip(trace.steps, trace.ot_losses, trace.task_losses))
    return columns, rows, model.named_parameters(), trace.optimizers, {
        "bank_space": model.bank.space
    }


def _metagan_named(model: MetaGan, bank: PrototypeBank) -> dict:
    named = {f"summary.{k}": v for k, v in model.summary.named_parameters().items()}
    named.update(model.generator.named_parameters("generator"))
    named.update(model.critic.named_parameters("critic"))
    named["bank"] = bank.matrix
    return named


def _train_metagan_task(cfg: ResolvedConfig):
    spec = _family_spec(cfg)
    if cfg["corpus"]:
        sets, _ = _load_sets(cfg["corpus"])
        pairs = [(batch, {}) for batch in sets]
    else:
        pairs = gen_task_corpus(spec, count=cfg["count"], seed=cfg["seed"])
    gan_cfg = _gan_config(cfg)
    summary = _gan_summary(cfg, spec.dim, np.random.default_rng(cfg["seed"]))
    model = MetaGan(spec, gan_cfg, summary, np.random.default_rng(cfg["seed"] + 1))
    bank = _data_bank(
        [p[0] for p in pairs], cfg["metagan.k"], np.random.default_rng(cfg["seed"] + 2)
    )
    trace = train_metagan(pairs, model, bank, gan_cfg)
    columns = ("step", "critic_loss", "generator_loss", "transport_loss")
    rows = list(
        zip(trace.steps, trace.critic_losses, trace.generator_losses, trace.ot_losses)
    )
    return columns, rows, _metagan_named(model, bank), trace.optimizers, {
        "bank_space": bank.space
    }


def cmd_train(args) -> int:
    cfg = _resolve(
        args,
        {
            "task": "task",
            "corpus": "corpus",
            "steps": "train.steps",
            "seed": "seed",
            "out": "out",
            "lambda_ot": "train.lambda_ot",
        },
    )
    task = cfg["task"]
    if task == "fewshot":
        columns, rows, named, optimizers, extra = _train_fewshot_task(cfg)
    elif task == "metagan":
        columns, rows, named, optimizers, extra = _train_metagan_task(cfg)
    else:
        columns, rows, named, optimizers, extra = _train_encoder(task, cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.csv"
    _write_trace(trace_path, cfg, columns, rows)
    groups: dict = {}
    for name, opt in optimizers.items():
        if opt is not None:
            groups.update(optimizer_state(opt, name))
    step = len(rows)
    ck_path = out / f"checkpoint.{step}"
    meta = {"task": task, **extra}
    save_checkpoint(
        ck_path,
        named,
        step,
        cfg.as_dict(),
        cfg.config_hash(),
        optimizer=groups,
        meta=meta,
    )
    print(f"trained {task} for {step} steps; wrote {trace_path} and {ck_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verb: eval


def _rebuild_model(task: str, cfg: ResolvedConfig, ck: Checkpoint):
    """Reconstruct the trained model shell and load checkpoint arrays into it."""
    rng = np.random.default_rng(cfg["seed"])
    space = ck.meta.get("bank_space", "data-space")
    if task in INPUT_DIMS:
        input_dim, output_dim, _ = _encoder_task(task, cfg)
        mode = cfg["train.mode"]
        net = SummaryNet(
            _summary_config(cfg, input_dim, None if mode == "unsupervised" else output_dim), rng
        )
        bank = _zero_bank(input_dim, cfg["model.k"], space)
        named = net.named_parameters()
        named["bank"] = bank.matrix
        assign_parameters(named, ck.params)
        return net, bank
    if task == "fewshot":
        fs_cfg = _fewshot_config(cfg)
        model = FewShotModel(fs_cfg, rng)
        assign_parameters(model.named_parameters(), ck.params)
        return model, model.bank
    if task == "metagan":
        spec = _family_spec(cfg)
        gan_cfg = _gan_config(cfg)
        summary = _gan_summary(cfg, spec.dim, rng)
        model = MetaGan(spec, gan_cfg, summary, np.random.default_rng(cfg["seed"] + 1))
        bank = _zero_bank(spec.dim, cfg["metagan.k"], space)
        assign_parameters(_metagan_named(model, bank), ck.params)
        return model, bank
    raise ConfigError(f"eval does not support task {task!r}")


def _eval_metrics(task: str, cfg: ResolvedConfig, model, bank) -> dict:
    eval_seed = cfg["eval.seed"]
    eval_count = cfg["eval.count"]
    if task == "mog":
        cap = cfg["mog.encode_cap"] or None
        if cfg["corpus"]:
            sets, truths = _load_sets(cfg["corpus"])
            pairs = list(zip(sets, truths))
            return {"mean_loglik": eval_mog_loglik(model, pairs, cap, seed=eval_seed)}
        spec = _mog_spec(cfg)
        n = eval_count or 500
        pairs = gen_mog_corpus(spec, n, eval_seed)
        return {
            "mean_loglik": eval_mog_loglik(model, pairs, cap, seed=eval_seed),
            "oracle_mean_loglik": oracle_mean_loglik(spec, n, eval_seed),
        }
    if task == "digitsum":
        def _accuracy(sets) -> float:
            hits = 0.0
            with no_grad():
                for batch in sets:
                    _, pred = model.summarize_with_prediction(batch.points)
                    hits += digit_sum_accuracy(float(pred.data.reshape(())), batch.label)
            return hits / len(sets)

        if cfg["corpus"]:
            sets, _ = _load_sets(cfg["corpus"])
            return {"accuracy": _accuracy(sets)}
        spec = _digit_spec(cfg, test_count=eval_count or 200)
        corpora = gen_digit_test_corpora(spec, eval_seed)
        by_size = {str(size): _accuracy(sets) for size, sets in corpora.items()}
        mean = sum(by_size.values()) / len(by_size)
        return {"accuracy_by_size": by_size, "mean_accuracy": mean}
    if task == "pointset":
        if cfg["corpus"]:
            sets, _ = _load_sets(cfg["corpus"])
        else:
            sets = gen_pointset_corpus(_pointset_spec(cfg, count_per_class=eval_count or 20), eval_seed)
        hits = 0
        with no_grad():
            for batch in sets:
                _, pred = model.summarize_with_prediction(batch.points)
                hits += int(int(np.argmax(pred.data)) == int(batch.label))
        return {"accuracy": hits / len(sets)}
    if task == "fewshot":
        fs_cfg = _fewshot_config(cfg)
        episodes = gen_episodes(fs_cfg, "novel", seed=eval_seed, count=eval_count or 1000)
        return eval_fewshot(model, episodes)
    if task == "metagan":
        spec = _family_spec(cfg)
        pairs = gen_task_corpus(spec, count=eval_count or 20, seed=eval_seed)
        tasks = [params for _, params in pairs]
        return eval_generative(model, tasks, seed=eval_seed)
    raise ConfigError(f"eval does not support task {task!r}")


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    stored = config_from_json_dict(ck.config)
    if stored.config_hash() != ck.config_hash:
        raise CheckpointError("checkpoint config does not match its recorded hash")
    overrides = _override_strings(
        args, {"corpus": "corpus", "seed": "eval.seed", "count": "eval.count", "out": "out"}
    )
    # fresh eval data by default; the stored corpus path was the training input
    overrides.setdefault("corpus", "")
    cfg = stored.with_overrides(overrides)
    task = ck.meta.get("task", cfg["task"])
    model, bank = _rebuild_model(task, cfg, ck)
    metrics = _eval_metrics(task, cfg, model, bank)
    out = Path(cfg["out"])
    payload = {
        "task": task,
        "seed": cfg["eval.seed"],
        "config": cfg.as_dict(),
        "config_hash": cfg.config_hash(),
        "checkpoint_step": ck.step,
        "metrics": metrics,
    }
    path = out / "metrics.json"
    _write_metrics(path, payload)
    summary = ", ".join(
        f"{k}={v}"
        for k, v in sorted(metrics.items())
        if isinstance(v, (int, float, np.floating, np.integer))
    )
    print(f"eval {task} at step {ck.step}: {summary} (wrote {path})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verb: ot


def _parse_weights(text, n: int, name: str) -> np.ndarray:
    if text is None:
        return uniform_weights(n)
    try:
        values = np.asarray([float(p) for p in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ConfigError(f"--{name} expects comma-separated numbers, got {text!r}") from None
    return values


def cmd_ot(args) -> int:
    cost = np.loadtxt(args.cost, delimiter=",", ndmin=2, dtype=np.float64)
    a = _parse_weights(args.a, cost.shape[0], "a")
    b = _parse_weights(args.b, cost.shape[1], "b")
    sk = SinkhornConfig(
        epsilon=args.eps if args.eps is not None else 0.1,
        tol=args.tol if args.tol is not None else 1e-6,
        max_iters=args.max_iters if args.max_iters is not None else 500,
    )
    result = sinkhorn(cost, Marginals(a, b), sk)
    report = {
        "value": transport_cost(result, cost),
        "entropic_value": entropic_objective(result.plan, cost, sk.epsilon),
        "iterations": result.iterations,
        "residual": result.residual,
        "converged": result.converged,
        "epsilon": sk.epsilon,
    }
    print(json.dumps(report, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = [
            f"# cost = {args.cost}",
            f"# a = {','.join(repr(x) for x in a)}",
            f"# b = {','.join(repr(x) for x in b)}",
            f"# epsilon = {sk.epsilon!r}",
        ]
        for row in result.plan:
            lines.append(",".join(repr(float(x)) for x in row))
        (out / "plan.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        _write_metrics(out / "metrics.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verb: gradcheck


def _gradcheck_paths(task: str, seed: int):
    """Small, fast loss instances per task: (name, fn, params) triples."""
    rng = np.random.default_rng(seed)
    paths = []
    if task in INPUT_DIMS:
        input_dim, output_dim, loss_fn = _encoder_task(task, resolve_config())
        # compact stand-in instance; widths kept small so checks stay quick
        net = SummaryNet(
            SummaryNetConfig(
                input_dim=input_dim,
                n_prototypes=4,
                encoder_widths=(10, 8),
                activation="tanh",
                head_hidden=(6,),
                output_dim=output_dim,
                predict_hidden=(6,),
            ),
            rng,
        )
        points = rng.normal(size=(9, input_dim))
        label = {"mog": None, "digitsum": 12, "pointset": 3}[task]
        batch = SetBatch(points, set_id=0, label=label)
        bank = PrototypeBank.from_points(rng.normal(size=(12, input_dim)), 4, rng)
        sk = SinkhornConfig(unroll_iters=10)

        def combined() -> Value:
            weights, pred = net.summarize_with_prediction(batch.points)
            return loss_fn(pred, batch) + 0.5 * transport_objective(
                batch.points, weights, bank, "euclidean", sk
            )

        paths.append((f"{task}-combined", combined, net.parameters() + [bank.matrix]))
        return paths
    if task == "fewshot":
        fs_cfg = FewShotConfig(
            episode=EpisodeSpec(n_way=3, k_shot=2, q_queries=2, dim=5),
            encoder_widths=(8, 6),
            bank_size=4,
            lambda_ot=0.7,
            sinkhorn=SinkhornConfig(unroll_iters=10),
            mean_low=-1.0,
            mean_high=1.0,
            n_base_classes=8,
            n_novel_classes=4,
            episodes=1,
            seed=seed,
        )
        model = FewShotModel(fs_cfg, rng)
        episode = next(iter(gen_episodes(fs_cfg, "base", seed=seed, count=1)))

        def episode_loss() -> Value:
            return episode_objective(model, episode, fs_cfg)[0]

        paths.append(("fewshot-episode", episode_loss, model.parameters()))
        return paths
    if task == "metagan":
        spec = TaskFamilySpec(family="gauss1d", n_points=12)
        gan_cfg = GanConfig(
            noise_dim=2,
            generator_widths=(10, 8),
            critic_widths=(10, 8),
            conditioning="conditional-critic",
            batch=8,
            iterations=1,
            seed=seed,
        )
        summary = SummaryNet(
            SummaryNetConfig(input_dim=1, n_prototypes=2, encoder_widths=(8, 6)), rng
        )
        model = MetaGan(spec, gan_cfg, summary, rng)
        real = rng.normal(size=(8, 1))
        z = rng.normal(size=(8, 2))
        h = model.summarize(real)

        def gen_path() -> Value:
            fake = generator_forward(model.generator, z, h)
            logits = discriminator_logit(model.critic, fake, h)
            return generator_loss(logits, non_saturating=True)

        def critic_path() -> Value:
            fake = generator_forward(model.generator, z, h)
            real_logits = discriminator_logit(model.critic, real, h)
            fake_logits = discriminator_logit(model.critic, fake.detach(), h)
            return critic_loss(real_logits, fake_logits)

        # the generator loss reaches both nets; the critic step detaches fakes
        # on purpose, so its check covers critic parameters only
        both = model.generator.parameters() + model.critic.parameters()
        paths.append(("metagan-generator", gen_path, both))
        paths.append(("metagan-critic", critic_path, model.critic.parameters()))
        return paths
    raise ConfigError(f"gradcheck does not support task {task!r}")


def cmd_gradcheck(args) -> int:
    tasks = [args.task] if args.task else ["mog", "digitsum", "pointset", "fewshot", "metagan"]
    seed = args.seed if args.seed is not None else 0
    results = {}
    worst = 0.0
    rng = np.random.default_rng(seed)
    for task in tasks:
        for name, fn, params in _gradcheck_paths(task, seed):
            report = check_gradients(fn, params, rng, samples_per_param=3)
            results[name] = report.max_rel_err
            worst = max(worst, report.max_rel_err)
    print(
        json.dumps(
            {"paths": results, "max_rel_err": worst, "threshold": GRADCHECK_THRESHOLD},
            sort_keys=True,
        )
    )
    if not np.isfinite(worst) or worst >= GRADCHECK_THRESHOLD:
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoset",
        description="Prototype-transport experiment harness.",
        epilog="config keys (defaults):\n" + schema_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", help="artifact directory")

    p_gen = sub.add_parser("gen", help="write a corpus.jsonl")
    common(p_gen)
    p_gen.add_argument("--task")
    p_gen.add_argument("--count", type=int)
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--components", type=int, help="mixture components (mog)")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train and write trace.csv plus a checkpoint")
    common(p_train)
    p_train.add_argument("--task")
    p_train.add_argument("--corpus", help="input corpus path")
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--lambda-ot", dest="lambda_ot", help="transport loss weight")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint and write metrics.json")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--corpus", help="eval corpus path")
    p_eval.add_argument("--seed", type=int, help="eval data seed")
    p_eval.add_argument("--count", type=int, help="eval corpus size")
    p_eval.set_defaults(func=cmd_eval)

    p_ot = sub.add_parser("ot", help="solve one transport instance from a cost CSV")
    p_ot.add_argument("--cost", required=True, help="comma-separated cost matrix file")
    p_ot.add_argument("--a", help="row marginal, comma-separated (default uniform)")
    p_ot.add_argument("--b", help="column marginal, comma-separated (default uniform)")
    p_ot.add_argument("--eps", type=float, help="entropic regularization")
    p_ot.add_argument("--tol", type=float)
    p_ot.add_argument("--max-iters", dest="max_iters", type=int)
    p_ot.add_argument("--out", help="also write plan.csv and metrics.json here")
    p_ot.set_defaults(func=cmd_ot)

    p_gc = sub.add_parser("gradcheck", help="finite-difference audit of the loss paths")
    p_gc.add_argument("--task", choices=("mog", "digitsum", "pointset", "fewshot", "metagan"))
    p_gc.add_argument("--seed", type=int)
    p_gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help and usage errors
        code = exc.code if isinstance(exc.code, int) else EXIT_CONFIG
        return code
    try:
        return args.func(args)
    except CheckpointVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION_MISMATCH
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except (NumericalError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ProtosetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - safety net
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
