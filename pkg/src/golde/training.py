"""Self-adversarial training of the product-manifold model.

Gradients come from torch autograd over the raw parameters. The
self-adversarial weights on the negatives are detached, so the gradient is
that of a loss whose weights are constants; ``finite_diff_check`` verifies
it against central differences of exactly that loss.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DatasetError, NumericError
from .evaluation import evaluate
from .model import GoldE, ProductManifoldConfig, init_params, param_class

log = logging.getLogger(__name__)

DTYPES = {"f64": torch.float64, "f32": torch.float32}


@dataclass
class TrainConfig:
    batch_size: int = 128
    neg_size: int = 32
    alpha: float = 1.0
    gamma: float = 6.0
    lr: float = 0.01
    steps: int = 2000
    valid_every: int = 500
    seed: int = 0
    norm: int = 2
    precision: str = "f64"
    filter_negatives: bool = False
    valid_max: int | None = None
    threads: int | None = None

    def validate(self):
        if self.batch_size < 1 or self.neg_size < 1 or self.steps < 0 or self.valid_every < 1:
            raise ConfigError("batch_size, neg_size and valid_every must be >= 1, steps >= 0")
        if not (self.alpha > 0 and self.gamma > 0 and self.lr > 0):
            raise ConfigError("alpha, gamma and lr must be positive")
        if self.norm < 1:
            raise ConfigError("norm must be a positive integer")
        if self.precision not in DTYPES:
            raise ConfigError(f"precision must be one of {', '.join(DTYPES)}")
        return self

    @property
    def dtype(self):
        return DTYPES[self.precision]


# --- loss -------------------------------------------------------------------

def adversarial_weights(neg_scores, alpha):
    """Softmax of ``alpha * score`` over the negatives, detached."""
    return torch.softmax(alpha * neg_scores.detach(), dim=-1)


def self_adversarial_loss(pos_score, neg_scores, gamma, alpha, weights=None):
    """``-log sig(gamma + s) - sum_i p_i log sig(-s_i - gamma)`` per positive.

    ``-log sig(z)`` is evaluated as ``softplus(-z)``. Pass ``weights`` to
    hold the negative proportions fixed.
    """
    pos_score = torch.as_tensor(pos_score, dtype=torch.float64)
    neg_scores = torch.as_tensor(neg_scores, dtype=pos_score.dtype)
    if weights is None:
        weights = adversarial_weights(neg_scores, alpha)
    pos_term = F.softplus(-(gamma + pos_score))
    neg_term = (weights * F.softplus(neg_scores + gamma)).sum(-1)
    return pos_term + neg_term


# --- negatives --------------------------------------------------------------

@dataclass
class NegativeBatch:
    triples: np.ndarray  # (B, g, 3)
    corrupt_head: np.ndarray  # (B,) bool


def sample_negatives(positives, g, rng, n_entities, filter_index=None, max_tries=10) -> NegativeBatch:
    """Corrupt either the head or the tail of each positive, ``g`` times.

    The side is drawn uniformly per positive and replacements uniformly over
    all entities. Accidental true triples are kept unless a ``filter_index``
    is passed, in which case they are redrawn (up to ``max_tries`` times).
    """
    if g < 1:
        raise ConfigError("need at least one negative per positive")
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    B = len(pos)
    corrupt_head = rng.random(B) < 0.5
    repl = rng.integers(0, n_entities, size=(B, g))
    neg = np.repeat(pos[:, None, :], g, axis=1)
    col = np.where(corrupt_head, 0, 2)
    neg[np.arange(B)[:, None], np.arange(g)[None, :], col[:, None]] = repl
    if filter_index is not None:
        for _ in range(max_tries):
            bad = np.array([[tuple(x) in filter_index for x in row] for row in neg])
            if not bad.any():
                break
            rows, cols = np.nonzero(bad)
            neg[rows, cols, col[rows]] = rng.integers(0, n_entities, size=len(rows))
    return NegativeBatch(neg, corrupt_head)


# --- gradients --------------------------------------------------------------

def batch_scores(model: GoldE, positives, negatives: NegativeBatch):
    pos = torch.as_tensor(np.asarray(positives, dtype=np.int64).reshape(-1, 3))
    neg = torch.as_tensor(negatives.triples)
    allt = torch.cat([pos[:, None, :], neg], dim=1)
    # negatives share their positive's relation: gather relation params once
    s = model.score(allt[..., 0], pos[:, 1:2], allt[..., 2])
    return s[:, 0], s[:, 1:]


def batch_loss(model: GoldE, positives, negatives: NegativeBatch, cfg: TrainConfig, weights=None):
    """Mean per-positive loss and the negative weights that were used."""
    pos, neg = batch_scores(model, positives, negatives)
    if weights is None:
        weights = adversarial_weights(neg, cfg.alpha)
    loss = self_adversarial_loss(pos, neg, cfg.gamma, cfg.alpha, weights).mean()
    return loss, weights


def grad(model: GoldE, positives, negatives: NegativeBatch, cfg: TrainConfig):
    """Loss value and the gradient of every raw parameter, as a dict."""
    leaves = {k: v.detach().requires_grad_(True) for k, v in model.params.items()}
    loss, _ = batch_loss(model.replace(leaves), positives, negatives, cfg)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {float(loss.detach())}", path="loss")
    names = list(leaves)
    gs = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
    grads = {}
    for name, g in zip(names, gs):
        g = torch.zeros_like(leaves[name]) if g is None else g
        if not bool(torch.isfinite(g).all()):
            raise NumericError(f"non-finite gradient in {name}", path=name)
        grads[name] = g
    return float(loss.detach()), grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(model: GoldE, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied to ``model.params`` in place."""
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    with torch.no_grad():
        for name, p in model.params.items():
            g = grads[name]
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + state.eps))
    return model, state


# --- finite differences -----------------------------------------------------

@dataclass
class FDReport:
    per_class: dict[str, float]
    overall: float
    checked: int
    worst: str = ""

    def lines(self):
        out = [f"{k:9s} max rel err {v:.3e}" for k, v in self.per_class.items()]
        out.append(f"overall   max rel err {self.overall:.3e} over {self.checked} entries ({self.worst})")
        return out


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_check(model: GoldE, positives, negatives, cfg, eps=1e-6, max_per_class=None, seed=0, floor=1e-6):
    """Compare ``grad`` with central differences on every parameter class.

    The negative weights are frozen at the base point so the oracle
    differentiates the same function as ``grad``. Relative errors use
    ``max(|a|, |b|, floor)`` as denominator.
    """
    if model.dtype != torch.float64:
        raise ConfigError("finite differences need double precision")
    _, analytic = grad(model, positives, negatives, cfg)
    with torch.no_grad():
        _, frozen = batch_loss(model, positives, negatives, cfg)
        base = {k: v.detach().clone() for k, v in model.params.items()}
        rng = np.random.default_rng(seed)
        per_class: dict[str, float] = {}
        overall, worst, checked = 0.0, "", 0

        def f(params):
            return float(batch_loss(model.replace(params), positives, negatives, cfg, frozen)[0])

        for name, value in base.items():
            flat = value.reshape(-1)
            idx = np.arange(flat.numel())
            if max_per_class is not None and len(idx) > max_per_class:
                idx = rng.choice(idx, size=max_per_class, replace=False)
            cls = param_class(name)
            for j in idx:
                orig = float(flat[j])
                flat[j] = orig + eps
                up = f(base)
                flat[j] = orig - eps
                down = f(base)
                flat[j] = orig
                fd = (up - down) / (2 * eps)
                err = relative_error(float(analytic[name].reshape(-1)[j]), fd, floor)
                checked += 1
                per_class[cls] = max(per_class.get(cls, 0.0), err)
                if err >= overall:
                    overall, worst = err, f"{name}[{j}]"
    return FDReport(per_class, overall, checked, worst)


# --- training loop ----------------------------------------------------------

LOG_COLUMNS = ("step", "loss", "split", "MR", "MRR", "H@1", "H@3", "H@10")


class MetricsLog:
    """Append-only tab-separated metrics rows, optionally mirrored to a file."""

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self.path = path
        if path is not None:
            with open(path, "w", encoding="utf-8") as f:
                f.write("\t".join(LOG_COLUMNS) + "\n")

    def append(self, step, loss, split="train", report=None):
        row = {"step": step, "loss": loss, "split": split}
        if report is not None:
            row.update(report.as_row())
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(format_log_row(row) + "\n")


def format_log_row(row: dict) -> str:
    cells = []
    for col in LOG_COLUMNS:
        v = row.get(col)
        if v is None:
            cells.append("-")
        elif isinstance(v, float):
            cells.append(repr(v))
        else:
            cells.append(str(v))
    return "\t".join(cells)


@dataclass
class TrainResult:
    model: GoldE
    final_model: GoldE
    best_step: int
    best_valid: object
    log: MetricsLog

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.log.rows if r["split"] == "train"]


def train(dataset, cfg: TrainConfig, manifold: ProductManifoldConfig, log_path=None, model=None) -> TrainResult:
    """Sample, score, differentiate and update for ``cfg.steps`` steps.

    Validation MRR is computed every ``cfg.valid_every`` steps and at the end;
    the returned ``model`` is the snapshot with the best validation MRR,
    ties going to the later step.
    """
    cfg.validate()
    if len(dataset.train) == 0:
        raise DatasetError("training split is empty")
    if manifold.norm != cfg.norm:
        manifold = ProductManifoldConfig(manifold.components, cfg.norm)
    if cfg.threads:
        torch.set_num_threads(cfg.threads)
    if model is None:
        model = init_params(manifold, dataset.vocab.n_entities, dataset.vocab.n_relations, cfg.seed, cfg.dtype)
    elif model.n_entities != dataset.vocab.n_entities or model.n_relations != dataset.vocab.n_relations:
        raise DatasetError("model vocabulary sizes do not match the dataset")
    metrics = MetricsLog(log_path)
    best, best_step, best_report = model.clone(), 0, None
    if cfg.steps == 0:
        return TrainResult(best, model, 0, None, metrics)

    fidx = dataset.filter_index()
    neg_filter = fidx if cfg.filter_negatives else None
    valid = dataset.valid if cfg.valid_max is None else dataset.valid[: cfg.valid_max]
    state = AdamState()
    train_triples = dataset.train
    n_ent = dataset.vocab.n_entities
    for step in range(1, cfg.steps + 1):
        rng = np.random.default_rng([cfg.seed, step])
        batch = train_triples[rng.integers(0, len(train_triples), size=cfg.batch_size)]
        negs = sample_negatives(batch, cfg.neg_size, rng, n_ent, neg_filter)
        loss, grads = grad(model, batch, negs, cfg)
        adam_step(model, grads, state, cfg.lr)
        metrics.append(step, loss)
        if len(valid) and (step % cfg.valid_every == 0 or step == cfg.steps):
            report = evaluate(model, valid, fidx)
            metrics.append(step, loss, "valid", report)
            log.info("step %d loss %.4f valid %s", step, loss, report.summary())
            if best_report is None or report.mrr >= best_report.mrr:
                best, best_step, best_report = model.clone(), step, report
    if best_report is None:
        best, best_step = model.clone(), cfg.steps
    return TrainResult(best, model, best_step, best_report, metrics)


def moving_average(values, window):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window

