"""Command-line entry point: ``golde <command> [flags]``.

Commands: ``train``, ``eval``, ``diagnose``, ``selfcheck``, ``toy``, ``stats``.
Exit codes: 0 success, 1 usage or config error, 2 data or checkpoint error,
3 numeric failure, 4 selfcheck failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields

from .checkpoint import load_checkpoint, save_checkpoint
from .data import dataset_stats, load_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    DiagnosticsUnavailableError,
    NumericError,
)
from .evaluation import evaluate, per_relation_report, report_tsv
from .model import (
    ELLIPTIC,
    EUCLIDEAN,
    HYPERBOLIC,
    Component,
    ProductManifoldConfig,
    orthogonality_report,
    pattern_diagnostics,
)
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_SELFCHECK = 0, 1, 2, 3, 4

CHECKPOINT_NAME = "model.ckpt"
METRICS_NAME = "metrics.tsv"
REPORT_NAME = "report.tsv"
RUNCONFIG_NAME = "run.cfg"
GEOMETRY_CODES = {"P": ELLIPTIC, "Q": HYPERBOLIC, "E": EUCLIDEAN}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunConfig:
    data: str = ""
    out: str = "run"
    checkpoint: str | None = None
    dim: int = 16
    kstar: int | None = None
    mp: int = 2
    mq: int = 2
    components: str | None = None
    batch_size: int = 128
    neg_size: int = 32
    alpha: float = 1.0
    gamma: float = 6.0
    lr: float = 0.01
    steps: int = 2000
    valid_every: int = 500
    valid_max: int | None = None
    norm: int = 2
    seed: int = 0
    precision: str = "f64"
    threads: int | None = None
    filter_negatives: bool = False

    def manifold(self) -> ProductManifoldConfig:
        if self.components:
            return parse_components(self.components, self.norm)
        return ProductManifoldConfig.from_partition(self.dim, self.kstar, self.mp, self.mq, self.norm)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names}).validate()

    def checkpoint_path(self) -> str:
        return self.checkpoint or os.path.join(self.out, CHECKPOINT_NAME)

    def dumps(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key.replace('_', '-')}={value}")
        return "\n".join(lines) + "\n"


def parse_components(text: str, norm: int = 2) -> ProductManifoldConfig:
    """``"P4,P4,Q5"`` -> elliptic, elliptic and hyperbolic components (ambient dims)."""
    comps = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        code, dim = token[:1].upper(), token[1:]
        if code not in GEOMETRY_CODES or not dim.isdigit():
            raise ConfigError(f"bad component {token!r}; use P<k>, Q<k> or E<k>")
        comps.append(Component(GEOMETRY_CODES[code], int(dim)))
    return ProductManifoldConfig(tuple(comps), norm)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> list[str]:
    """Turn ``key=value`` lines into ``--key value`` tokens."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    tokens = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "config":
            raise ConfigError(f"{path}:{lineno}: config files cannot include other config files")
        tokens += [f"--{key.replace('_', '-')}", value]
    return tokens


def _add_train_flags(p):
    d = RunConfig()
    add = p.add_argument
    add("--config", metavar="FILE", help="key=value file supplying any flag; command line wins")
    add("--data", required=True, help="dataset directory with train/valid/test.txt")
    add("--out", default=d.out, help="output directory (default: %(default)s)")
    add("--checkpoint", help=f"checkpoint path (default: OUT/{CHECKPOINT_NAME})")
    add("--dim", type=int, default=d.dim, help="total stored embedding size k (default: %(default)s)")
    add("--kstar", type=int, help="entries given to elliptic components (default: dim/2 when mixed)")
    add("--mp", type=int, default=d.mp, help="number of elliptic components (default: %(default)s)")
    add("--mq", type=int, default=d.mq, help="number of hyperbolic components (default: %(default)s)")
    add("--components", help="explicit component list, e.g. P4,P4,Q5,Q5 or E8,E8; overrides dim/kstar/mp/mq")
    add("--batch-size", type=int, default=d.batch_size, help="positives per step (default: %(default)s)")
    add("--neg-size", type=int, default=d.neg_size, help="negatives per positive (default: %(default)s)")
    add("--alpha", type=float, default=d.alpha, help="adversarial temperature (default: %(default)s)")
    add("--gamma", type=float, default=d.gamma, help="margin (default: %(default)s)")
    add("--lr", type=float, default=d.lr, help="Adam learning rate (default: %(default)s)")
    add("--steps", type=int, default=d.steps, help="training steps (default: %(default)s)")
    add("--valid-every", type=int, default=d.valid_every, help="validation period (default: %(default)s)")
    add("--valid-max", type=int, help="validate on at most this many triples (default: all)")
    add("--norm", type=int, default=d.norm, help="distance exponent l (default: %(default)s)")
    add("--seed", type=int, default=d.seed, help="random seed (default: %(default)s)")
    add("--precision", choices=("f64", "f32"), default=d.precision, help="float format (default: %(default)s)")
    add("--threads", type=int, help="torch intra-op threads (default: all cores)")
    add("--filter-negatives", type=_bool, default=d.filter_negatives, help="resample known-true negatives (default: false)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="golde", description="Product-manifold knowledge graph embeddings.", allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write checkpoint, metrics and figures", allow_abbrev=False)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="filtered ranking metrics of a checkpoint", allow_abbrev=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--per-relation", action="store_true", help="add one row per relation")
    p.add_argument("--raw", action="store_true", help="unfiltered ranks")
    p.add_argument("--out", help="also write the report (and a per-relation figure) here")

    p = sub.add_parser("diagnose", help="pattern and orthogonality defects of relations", allow_abbrev=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("relations", nargs="*", help="relation names for symmetry (default: all)")
    p.add_argument("--inverse", nargs=2, action="append", default=[], metavar=("R1", "R2"))
    p.add_argument("--compose", nargs=3, action="append", default=[], metavar=("R1", "R2", "R3"),
                   help="defect of R1 against R3 after R2")

    p = sub.add_parser("selfcheck", help="run the embedded property suite", allow_abbrev=False)
    p.add_argument("--trials", type=int, default=None, help="trials per property (default: 200)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", default="f64", help="only f64 is supported")

    p = sub.add_parser("toy", help="write the synthetic toy dataset", allow_abbrev=False)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("stats", help="entity, relation and split counts of a dataset", allow_abbrev=False)
    p.add_argument("--data", required=True)
    return parser


def _expand_config(argv: list[str]) -> list[str]:
    if "train" not in argv:
        return argv
    i = argv.index("train") + 1
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[i:])
    if not known.config:
        return argv
    return [*argv[:i], *read_config_file(known.config), *argv[i:]]


# --- commands ---------------------------------------------------------------

def cmd_train(args, out=sys.stdout) -> int:
    from .plotting import plot_per_relation, plot_training

    run = RunConfig(**{f.name: getattr(args, f.name) for f in fields(RunConfig)})
    manifold = run.manifold()
    cfg = run.train_config()
    dataset = load_dataset(run.data)
    os.makedirs(run.out, exist_ok=True)
    with open(os.path.join(run.out, RUNCONFIG_NAME), "w", encoding="utf-8") as f:
        f.write(run.dumps())
    print(f"manifold {manifold.describe()}", file=out)

    result = train(dataset, cfg, manifold, log_path=os.path.join(run.out, METRICS_NAME))
    model = result.model
    save_checkpoint(run.checkpoint_path(), model, dataset.vocab, seed=cfg.seed, step=result.best_step)

    fidx = dataset.filter_index()
    lines = []
    if result.best_valid is not None:
        print(f"best valid (step {result.best_step}): {result.best_valid.summary()}", file=out)
        lines.append(report_tsv("valid", result.best_valid))
    if len(dataset.test):
        rows = per_relation_report(model, dataset.test, fidx, dataset.vocab.relations)
        test = evaluate(model, dataset.test, fidx)
        result.log.append(result.best_step, None, "test", test)
        print(f"test: {test.summary()}", file=out)
        lines.append(report_tsv("test", test, rows))
        plot_per_relation(rows, os.path.join(run.out, "per_relation.png"), "test MRR per relation")
    with open(os.path.join(run.out, REPORT_NAME), "w", encoding="utf-8") as f:
        f.write("".join(lines))
    plot_training(result.log.rows, os.path.join(run.out, "training.png"))
    return EXIT_OK


def _check_compatible(model, header, dataset):
    vocab = header.get("vocab")
    if model.n_entities != dataset.vocab.n_entities or model.n_relations != dataset.vocab.n_relations:
        raise CheckpointError(
            f"checkpoint has {model.n_entities} entities / {model.n_relations} relations, "
            f"dataset has {dataset.vocab.n_entities} / {dataset.vocab.n_relations}"
        )
    if vocab and (vocab["entities"] != dataset.vocab.entities or vocab["relations"] != dataset.vocab.relations):
        raise CheckpointError("checkpoint vocabulary differs from the dataset's id assignment")


def cmd_eval(args, out=sys.stdout) -> int:
    model, header = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    _check_compatible(model, header, dataset)
    triples = dataset.split(args.split)
    fidx = None if args.raw else dataset.filter_index()
    report = evaluate(model, triples, fidx)
    rows = per_relation_report(model, triples, fidx, dataset.vocab.relations) if args.per_relation else None
    text = report_tsv(args.split, report, rows)
    out.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"eval_{args.split}.tsv"), "w", encoding="utf-8") as f:
            f.write(text)
        if rows:
            from .plotting import plot_per_relation

            plot_per_relation(rows, os.path.join(args.out, f"eval_{args.split}_per_relation.png"), f"{args.split} MRR")
    return EXIT_OK


def cmd_diagnose(args, out=sys.stdout) -> int:
    model, header = load_checkpoint(args.checkpoint)
    names = (header.get("vocab") or {}).get("relations") or [str(i) for i in range(model.n_relations)]
    ids = {n: i for i, n in enumerate(names)}

    def resolve(name):
        if name not in ids:
            raise ConfigError(f"unknown relation {name!r}; available: {', '.join(names)}")
        return ids[name]

    single = [resolve(n) for n in args.relations] if args.relations else list(range(model.n_relations))
    pairs = [tuple(resolve(n) for n in pair) for pair in args.inverse]
    triples = [tuple(resolve(n) for n in tr) for tr in args.compose]
    lines = ["kind\trelations\tdefect\tper_component"]
    for r in single:
        d = pattern_diagnostics(model, [r])
        lines.append(f"symmetry\t{names[r]}\t{d.symmetry:.6g}\t{_fmt_components(d, 'symmetry')}")
        orth = orthogonality_report(model, r)
        lines.append(f"orthogonality\t{names[r]}\t{max(orth):.3g}\t{','.join(f'{x:.3g}' for x in orth)}")
    for r1, r2 in pairs:
        d = pattern_diagnostics(model, [r1, r2])
        lines.append(f"inversion\t{names[r1]},{names[r2]}\t{d.inversion:.6g}\t{_fmt_components(d, 'inversion')}")
    for r1, r2, r3 in triples:
        d = pattern_diagnostics(model, [r1, r2, r3])
        lines.append(
            f"composition\t{names[r1]},{names[r2]},{names[r3]}\t{d.composition:.6g}\t{_fmt_components(d, 'composition')}"
        )
    out.write("\n".join(lines) + "\n")
    return EXIT_OK


def _fmt_components(defects, kind):
    return ",".join(f"{c[kind]:.3g}" for c in defects.per_component)


def cmd_selfcheck(args, out=sys.stdout) -> int:
    from .selfcheck import DEFAULT_TRIALS, run_selfcheck

    if args.precision != "f64":
        raise ConfigError("selfcheck runs in double precision only (--precision f64)")
    trials = DEFAULT_TRIALS if args.trials is None else args.trials
    if trials < 1:
        raise ConfigError("--trials must be >= 1")
    results = run_selfcheck(trials, args.seed, echo=lambda line: print(line, file=out, flush=True))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed", file=out)
    return EXIT_SELFCHECK if failed else EXIT_OK


def cmd_toy(args, out=sys.stdout) -> int:
    from .toy import write_toy

    write_toy(args.out, args.seed)
    print(f"toy dataset written to {args.out}", file=out)
    return EXIT_OK


def cmd_stats(args, out=sys.stdout) -> int:
    stats = dataset_stats(load_dataset(args.data))
    out.write("\t".join(stats) + "\n" + "\t".join(str(v) for v in stats.values()) + "\n")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "selfcheck": cmd_selfcheck,
    "toy": cmd_toy,
    "stats": cmd_stats,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_expand_config(argv))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args, out)
    except (UsageError, ConfigError, DiagnosticsUnavailableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        where = f" (in {exc.path})" if exc.path else ""
        print(f"numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
