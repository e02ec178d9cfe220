"""Training runs: configuration, model/data wiring, Adam, metrics and reports."""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .autodiff import Tape, backward
from .errors import ConfigError
from .qattention import QAttConfig, QAttModel
from .qlayers import Module, param_count
from .qtransformer import QTransformerConfig, Seq2SeqBatch, Seq2SeqTransformer, TransformerClassifier
from .tasks import (CHARSET, SVA_VOCAB, gen_arithmetic, gen_pairwise, gen_sva, make_pair_batch,
                    pad_sequences)

log = logging.getLogger(__name__)

LEARNING_RATES = (1e-3, 3e-4)
BATCH_SIZES = (32, 64)
TASK_MODELS = {"pairwise": ("qatt",), "arithmetic": ("qtransformer",), "sva": ("qtransformer",)}
MODEL_VARIANTS = {"qatt": ("real", "quaternion"), "qtransformer": ("real", "partial", "full")}


@dataclass
class TrainConfig:
    task: str = "pairwise"
    model: str = "qatt"
    variant: str = "quaternion"
    d: int = 8
    hidden: int = 16
    layers: int = 1
    heads: int = 1
    ffn: int | None = None
    activation: str = "relu"
    project: bool = False
    init: str = "glorot"
    learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 1000
    eval_every: int = 100
    seed: int = 0
    n_train: int = 2000
    n_val: int = 500
    vocab: int = 50
    min_len: int = 4
    max_len: int = 8
    verbatim: bool = False
    digits_min: int = 1
    digits_max: int = 2
    ops: str = "+"
    signed: bool = False
    sva_depth: int = 2
    target_metric: float | None = None
    expert: bool = False
    output_dir: str = "runs/default"

    def validate(self) -> TrainConfig:
        if self.task not in TASK_MODELS:
            raise ConfigError("task", f"expected one of {sorted(TASK_MODELS)}, got {self.task!r}")
        if self.model not in TASK_MODELS[self.task]:
            raise ConfigError("model", f"task {self.task!r} supports {TASK_MODELS[self.task]}, got {self.model!r}")
        if self.variant not in MODEL_VARIANTS[self.model]:
            raise ConfigError("variant", f"model {self.model!r} supports {MODEL_VARIANTS[self.model]}, "
                                         f"got {self.variant!r}")
        if not self.expert:
            if self.learning_rate not in LEARNING_RATES:
                raise ConfigError("learning_rate", f"expected one of {LEARNING_RATES} (use expert=true to override)")
            if self.batch_size not in BATCH_SIZES:
                raise ConfigError("batch_size", f"expected one of {BATCH_SIZES} (use expert=true to override)")
        for name in ("d", "hidden", "layers", "heads", "batch_size", "n_train", "n_val", "eval_every",
                     "vocab", "min_len"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps", "must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate", "must be positive")
        if self.max_len < self.min_len:
            raise ConfigError("max_len", "must be >= min_len")
        if not set(self.ops) <= set("+-*") or not self.ops:
            raise ConfigError("ops", "must be a non-empty subset of '+-*'")
        if self.model == "qtransformer" and self.d % self.heads:
            raise ConfigError("heads", "must divide d")
        return self

    # -- key=value file format ------------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser["train"] = {f.name: "" if getattr(self, f.name) is None else str(getattr(self, f.name))
                           for f in dataclasses.fields(self)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, **overrides) -> TrainConfig:
        parser = configparser.ConfigParser()
        parser.read_string(text)
        values = dict(parser["train"]) if parser.has_section("train") else {}
        values.update({k: str(v) for k, v in overrides.items() if v is not None})
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict[str, str]) -> TrainConfig:
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(key, "unknown configuration field")
            kwargs[key] = _parse_field(key, types[key], raw)
        return cls(**kwargs)


def _parse_field(key: str, type_name: str, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if type_name.startswith("int | None") or type_name.startswith("float | None"):
            if raw.strip() in ("", "None"):
                return None
            type_name = type_name.split(" |")[0]
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        if type_name == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type_name}") from None


# -- optimizer ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {id(p): np.zeros_like(p.value) for p in self.params}
        self.v = {id(p): np.zeros_like(p.value) for p in self.params}

    def step(self, grads: dict[int, np.ndarray]) -> None:
        """Apply one update; ``grads`` maps ``id(parameter)`` to its gradient."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = grads.get(id(p))
            if g is None:
                continue
            m, v = self.m[id(p)], self.v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def parameter_grads(tape: Tape, grads: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Re-key gradients from tape node ids to ``id(Parameter)``."""
    return {id(tape.parameters[nid]): g for nid, g in grads.items() if tape.parameters[nid] is not None}


# -- experiment wiring -------------------------------------------------------------------

@dataclass
class Experiment:
    model: Module
    train: list
    val: list
    make_batch: object
    evaluate: object
    metric_name: str


def _split_unique(train, val, key):
    seen = {key(e) for e in train}
    return [e for e in val if key(e) not in seen]


def datasets(cfg: TrainConfig) -> tuple[list, list]:
    """The ``(train, val)`` example lists of a config; validation uses a derived seed."""
    cfg.validate()
    val_seed = cfg.seed + 1_000_003
    if cfg.task == "pairwise":
        lengths = (cfg.min_len, cfg.max_len)
        return (gen_pairwise(cfg.seed, cfg.n_train, cfg.vocab, lengths, cfg.verbatim),
                gen_pairwise(val_seed, cfg.n_val, cfg.vocab, lengths, cfg.verbatim))
    if cfg.task == "arithmetic":
        digits = (cfg.digits_min, cfg.digits_max)
        train = gen_arithmetic(cfg.seed, cfg.n_train, digits, tuple(cfg.ops), cfg.signed)
        pool = gen_arithmetic(val_seed, 4 * cfg.n_val, digits, tuple(cfg.ops), cfg.signed)
        # held-out problems only, unless the problem space is too small to allow it
        val = _split_unique(train, pool, lambda e: e.source)[: cfg.n_val] or pool[: cfg.n_val]
        return train, val
    return gen_sva(cfg.seed, cfg.n_train, cfg.sva_depth), gen_sva(val_seed, cfg.n_val, cfg.sva_depth)


def build_experiment(cfg: TrainConfig) -> Experiment:
    train, val = datasets(cfg)
    if cfg.task == "pairwise":
        model = QAttModel(QAttConfig(d=cfg.d, hidden_q=cfg.hidden, num_classes=2, vocab=cfg.vocab,
                                     activation=cfg.activation, quaternion=cfg.variant == "quaternion",
                                     project=cfg.project, init=cfg.init, seed=cfg.seed))

        def make_batch(examples):
            return make_pair_batch(examples, model.pad_id)

        def evaluate(examples):
            return _accuracy(model, make_batch, examples)

        return Experiment(model, train, val, make_batch, evaluate, "accuracy")

    if cfg.task == "arithmetic":
        longest = max(max(len(e.source), len(e.target) + 1) for e in train + val)
        model = Seq2SeqTransformer(QTransformerConfig(
            variant=cfg.variant, layers=cfg.layers, d_q=cfg.d, heads=cfg.heads, ffn_hidden=cfg.ffn,
            vocab=len(CHARSET), max_len=longest + 2, pad_id=CHARSET.PAD, seed=cfg.seed, init=cfg.init))

        def make_batch(examples):
            return Seq2SeqBatch.from_pairs([(e.source, e.target) for e in examples])

        def evaluate(examples):
            return exact_match(model, examples)

        return Experiment(model, train, val, make_batch, evaluate, "exact_match")

    pad = len(SVA_VOCAB)
    model = TransformerClassifier(QTransformerConfig(
        variant=cfg.variant, layers=cfg.layers, d_q=cfg.d, heads=cfg.heads, ffn_hidden=cfg.ffn,
        vocab=pad + 1, max_len=2 + 3 * cfg.sva_depth, num_classes=2, pad_id=pad, seed=cfg.seed,
        init=cfg.init))

    def make_batch(examples):
        ids, mask = pad_sequences([e.ids for e in examples], pad)
        return _LabeledBatch(ids, mask, np.array([e.label for e in examples]))

    def evaluate(examples):
        return _accuracy(model, make_batch, examples)

    return Experiment(model, train, val, make_batch, evaluate, "accuracy")


@dataclass
class _LabeledBatch:
    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray


def _accuracy(model, make_batch, examples, chunk: int = 256) -> float:
    correct = 0
    for i in range(0, len(examples), chunk):
        batch = make_batch(examples[i:i + chunk])
        correct += int(np.sum(model.predict(batch) == batch.labels))
    return correct / len(examples)


def exact_match(model: Seq2SeqTransformer, examples, chunk: int = 256) -> float:
    """Fraction of examples whose greedy decode equals the whole target sequence."""
    hits = 0
    for i in range(0, len(examples), chunk):
        part = examples[i:i + chunk]
        max_len = max(len(e.target) for e in part) + 1
        decoded = model.greedy_decode([e.source for e in part], max_len=max_len)
        hits += sum(tuple(d) == tuple(e.target) for d, e in zip(decoded, part))
    return hits / len(examples)


# -- training loop -----------------------------------------------------------------------

@dataclass
class RunReport:
    metric_name: str
    final_metric: float
    initial_loss: float
    steps_run: int
    params: dict
    curve: list = field(default_factory=list)
    wall_clock: float = 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


def param_summary(model: Module) -> dict:
    report = param_count(model)
    ratio = report.weight_ratio
    return {
        "total": report.total,
        "weights": report.weights,
        "by_kind": report.by_kind,
        "reference_total": report.reference_total,
        "reference_weights": report.reference_weights,
        "weight_ratio": None if ratio is None else f"{ratio.numerator}/{ratio.denominator}",
        "weight_ratio_value": None if ratio is None else float(ratio),
    }


def train(cfg: TrainConfig, out_dir: str | Path | None = None, experiment: Experiment | None = None):
    """Train per ``cfg``; returns ``(report, experiment)``.

    With ``out_dir`` the config, metric records (``step<TAB>loss<TAB>metric``),
    checkpoint and report are written there.  Training stops early once the
    validation metric reaches ``cfg.target_metric``.
    """
    started = time.perf_counter()
    exp = experiment or build_experiment(cfg)
    model = exp.model
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(exp.train))
    cursor = 0
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.ini").write_text(cfg.to_ini())
        metrics_file = (out / "metrics.tsv").open("w")

    def next_batch():
        nonlocal order, cursor
        if cursor + cfg.batch_size > len(order):
            order = rng.permutation(len(exp.train))
            cursor = 0
        idx = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        return exp.make_batch([exp.train[i] for i in idx])

    curve = []
    window = []
    initial_loss = None
    metric = None
    step = 0
    try:
        for step in range(cfg.steps + 1):
            batch = next_batch()
            tape = Tape()
            loss = model.loss(tape, batch)
            value = float(loss.value)
            if initial_loss is None:
                initial_loss = value
            window.append(value)
            if step % cfg.eval_every == 0 or step == cfg.steps:
                metric = exp.evaluate(exp.val)
                mean_loss = float(np.mean(window))
                curve.append((step, mean_loss, metric))
                window = []
                log.info("step %d loss %.4f %s %.4f", step, mean_loss, exp.metric_name, metric)
                if out is not None:
                    metrics_file.write(f"{step}\t{mean_loss:.10g}\t{metric:.10g}\n")
                    metrics_file.flush()
                if cfg.target_metric is not None and metric >= cfg.target_metric:
                    break
            if step == cfg.steps:
                break
            opt.step(parameter_grads(tape, backward(tape, loss)))
    finally:
        if out is not None:
            metrics_file.close()

    report = RunReport(exp.metric_name, metric, initial_loss, step, param_summary(model), curve,
                       time.perf_counter() - started)
    if out is not None:
        checkpoint.save(out / "checkpoint.qnn", model.state_dict())
        (out / "report.json").write_text(report.to_json())
    return report, exp


def load_run(run_dir: str | Path):
    """Rebuild the experiment of a finished run and load its checkpoint."""
    run_dir = Path(run_dir)
    cfg = TrainConfig.from_ini((run_dir / "config.ini").read_text())
    exp = build_experiment(cfg)
    exp.model.load_state_dict(checkpoint.load(run_dir / "checkpoint.qnn"))
    return cfg, exp


def expected_initial_loss(num_classes: int) -> float:
    return math.log(num_classes)
