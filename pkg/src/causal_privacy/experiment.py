"""Config-driven experiment grid: sample, split, train, shift, attack, record.

Config files are INI documents::

    [experiment]
    network = bench10          # bundled name or a path relative to the config
    sizes = 60000
    noises = 0, 0.5, 1, 2
    models = causal, mlp, misspecified(2)
    attacks = learned, bounded-loss
    seeds = 0, 1, 2

    [target_mlp]               # optional sections override defaults
    hidden = 128, 512, 128
    ...

Every grid cell yields two rows: one attacking with non-members from the
training distribution (``P``) and one with non-members from the shifted
distribution (``P*``).
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import datetime
import hashlib
import io
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import attack as atk
from . import dp
from .bayesnet import BayesianNetwork, load_network, perturb, sample
from .models import (
    ATTACKER_CONFIG,
    ATTACKER_HIDDEN,
    TARGET_CONFIG,
    TARGET_HIDDEN,
    TrainConfig,
    evaluate,
    fit_causal,
    fit_misspecified,
    fit_mlp,
)
from .seeding import derive_seed

CSV_VERSION = 1
CSV_COLUMNS = (
    "config_hash",
    "n_total",
    "n_train",
    "noise",
    "model",
    "attack",
    "test_dist",
    "seed",
    "train_acc",
    "test_acc",
    "attack_accuracy",
    "advantage",
    "tpr",
    "fpr",
    "n_eval",
    "adv_stderr",
    "epsilon",
    "adv_bound",
)
TEST_DISTS = ("P", "P*")
ATTACK_KINDS = ("learned", "bounded-loss")


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class DpSettings:
    scale: float
    sensitivity_trials: int = 10


@dataclass(frozen=True)
class PateSettings:
    teachers: int
    gamma: float


@dataclass(frozen=True)
class ExperimentConfig:
    network: str
    sizes: tuple[int, ...]
    noises: tuple[float, ...]
    models: tuple[str, ...]
    attacks: tuple[str, ...] = ("learned",)
    seeds: tuple[int, ...] = (0,)
    smoothing: float = 1.0
    target_mlp: TrainConfig = TARGET_CONFIG
    target_hidden: tuple[int, ...] = TARGET_HIDDEN
    attacker: TrainConfig = ATTACKER_CONFIG
    attacker_hidden: tuple[int, ...] = ATTACKER_HIDDEN
    bounded_loss: str = "cross-entropy"
    dp: DpSettings | None = None
    pate: PateSettings | None = None
    output: str | None = None
    workers: int = 1
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if not self.models or not self.seeds or not self.sizes:
            raise ConfigError("need at least one model kind, one seed and one sample size")
        if not self.noises:
            raise ConfigError("need at least one shift noise")
        for m in self.models:
            parse_model_kind(m)
        for a in self.attacks:
            if a not in ATTACK_KINDS:
                raise ConfigError(f"unknown attack kind {a!r}")
        if any(n < 20 for n in self.sizes):
            raise ConfigError("sample sizes must be >= 20")
        if any(x < 0 for x in self.noises):
            raise ConfigError("noises must be >= 0")
        if self.dp and self.pate:
            raise ConfigError("choose at most one of [dp] and [pate]")

    def network_path(self) -> Path:
        return resolve_network(self.network, self.base_dir)

    def hash(self) -> str:
        doc = dataclasses.asdict(self)
        for volatile in ("output", "workers", "base_dir"):
            doc.pop(volatile)
        doc["network_text"] = self.network_path().read_text(encoding="utf-8")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]


_MODEL_RE = re.compile(r"^misspecified\((\d+)\)$")


def parse_model_kind(kind: str):
    """``'causal'`` / ``'mlp'`` / ``('misspecified', k)``."""
    if kind in ("causal", "mlp"):
        return kind
    m = _MODEL_RE.match(kind)
    if m:
        return ("misspecified", int(m.group(1)))
    raise ConfigError(f"unknown model kind {kind!r}")


def resolve_network(name: str, base_dir=".") -> Path:
    path = Path(base_dir) / name
    if path.is_file():
        return path
    if Path(name).is_file():
        return Path(name)
    bundled = resources.files("causal_privacy") / "data" / f"{name}.net"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"network {name!r} not found")


_SCHEMA = {
    "experiment": {"network", "sizes", "noises", "models", "attacks", "seeds", "output", "workers"},
    "causal": {"smoothing"},
    "target_mlp": {"hidden", "learning_rate", "steps", "batch_size", "dtype"},
    "attacker": {"hidden", "learning_rate", "steps", "batch_size", "dtype"},
    "bounded_loss": {"loss"},
    "dp": {"scale", "sensitivity_trials"},
    "pate": {"teachers", "gamma"},
}


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def _train_section(sec, default: TrainConfig, default_hidden):
    if sec is None:
        return default, default_hidden
    hidden = tuple(int(h) for h in _split(sec["hidden"])) if "hidden" in sec else default_hidden
    cfg = dataclasses.replace(
        default,
        learning_rate=float(sec.get("learning_rate", default.learning_rate)),
        steps=int(sec.get("steps", default.steps)),
        batch_size=int(sec.get("batch_size", default.batch_size)),
        dtype=sec.get("dtype", default.dtype),
    )
    return cfg, hidden


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(parser[section]) - _SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    if "experiment" not in parser:
        raise ConfigError("missing [experiment] section")
    ex = parser["experiment"]
    try:
        if "network" not in ex:
            raise ConfigError("[experiment] needs 'network'")
        target, target_hidden = _train_section(parser["target_mlp"] if "target_mlp" in parser else None, TARGET_CONFIG, TARGET_HIDDEN)
        attacker, attacker_hidden = _train_section(
            parser["attacker"] if "attacker" in parser else None, ATTACKER_CONFIG, ATTACKER_HIDDEN
        )
        dp_settings = None
        if "dp" in parser:
            dp_settings = DpSettings(float(parser["dp"]["scale"]), int(parser["dp"].get("sensitivity_trials", 10)))
            if dp_settings.scale <= 0 or dp_settings.sensitivity_trials < 1:
                raise ConfigError("[dp] scale must be > 0 and sensitivity_trials >= 1")
        pate_settings = None
        if "pate" in parser:
            pate_settings = PateSettings(int(parser["pate"]["teachers"]), float(parser["pate"]["gamma"]))
            if pate_settings.teachers < 1 or pate_settings.gamma <= 0:
                raise ConfigError("[pate] needs teachers >= 1 and gamma > 0")
        loss = parser["bounded_loss"].get("loss", "cross-entropy") if "bounded_loss" in parser else "cross-entropy"
        if loss not in ("cross-entropy", "zero-one"):
            raise ConfigError(f"unknown bounded-loss loss {loss!r}")
        config = ExperimentConfig(
            network=ex["network"],
            sizes=tuple(int(v) for v in _split(ex.get("sizes", ""))),
            noises=tuple(float(v) for v in _split(ex.get("noises", "0"))),
            models=tuple(_split(ex.get("models", ""))),
            attacks=tuple(_split(ex.get("attacks", "learned"))),
            seeds=tuple(int(v) for v in _split(ex.get("seeds", "0"))),
            smoothing=float(parser["causal"].get("smoothing", 1.0)) if "causal" in parser else 1.0,
            target_mlp=target,
            target_hidden=target_hidden,
            attacker=attacker,
            attacker_hidden=attacker_hidden,
            bounded_loss=loss,
            dp=dp_settings,
            pate=pate_settings,
            output=ex.get("output"),
            workers=int(ex.get("workers", 1)),
            base_dir=str(base_dir),
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value: {exc}") from None
    config.network_path()
    return config


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, base_dir=path.parent)


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("causal_privacy") / "data" / f"{name}.ini"))


# -- records -----------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    config_hash: str
    n_total: int
    n_train: int
    noise: float
    model: str
    attack: str
    test_dist: str
    seed: int
    train_acc: float
    test_acc: float
    attack_accuracy: float
    advantage: float
    tpr: float
    fpr: float
    n_eval: int
    adv_stderr: float
    epsilon: float | None = None
    adv_bound: float | None = None

    def key(self, model_order, attack_order):
        return (
            self.n_total,
            self.seed,
            self.noise,
            model_order.index(self.model),
            attack_order.index(self.attack),
            TEST_DISTS.index(self.test_dist),
        )


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records, timestamp: str | None = None) -> str:
    buf = io.StringIO()
    ts = timestamp or datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    buf.write(f"# causal-privacy results v{CSV_VERSION} generated {ts}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


_INT_COLS = {"n_total", "n_train", "seed", "n_eval"}
_STR_COLS = {"config_hash", "model", "attack", "test_dist"}


def records_from_csv(text: str) -> list[RunRecord]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    out = []
    for row in reader:
        kw = {}
        for c in CSV_COLUMNS:
            v = row[c]
            if c in _STR_COLS:
                kw[c] = v
            elif c in _INT_COLS:
                kw[c] = int(v)
            else:
                kw[c] = float(v) if v != "" else None
        out.append(RunRecord(**kw))
    return out


# -- execution ---------------------------------------------------------------


def _learner(kind, net: BayesianNetwork, config: ExperimentConfig, seed: int):
    parsed = parse_model_kind(kind)
    if parsed == "causal":
        return lambda d: fit_causal(d, net, config.smoothing)
    if parsed == "mlp":
        cfg = config.target_mlp.with_seed(derive_seed(seed, "target", kind))
        return lambda d: fit_mlp(d, cfg, config.target_hidden)
    k = parsed[1]
    # one extras seed for every k keeps the extra-parent sets nested
    extras_seed = derive_seed(seed, "extras")
    return lambda d: fit_misspecified(d, net, k, extras_seed, config.smoothing)


def _run_cell(config: ExperimentConfig, size: int, seed: int, config_hash: str) -> list[RunRecord]:
    net = load_network(config.network_path())
    data = sample(net, size, derive_seed(seed, "data", size))
    split = atk.make_attack_split(data, derive_seed(seed, "split", size))
    tests = {"P": split.target_test}
    for noise in config.noises:
        shifted_net = perturb(net, noise, derive_seed(seed, "shift", noise))
        tests[noise] = sample(shifted_net, len(split.target_test), derive_seed(seed, "shift-sample", size, noise))

    records = []
    for kind in config.models:
        learner = _learner(kind, net, config, seed)
        epsilon = None
        if config.pate:
            ensemble = dp.pate_train(
                split.target_train, config.pate.teachers, learner, derive_seed(seed, "pate", kind), kind
            )
            target = dp.PateStudent(ensemble, config.pate.gamma, derive_seed(seed, "pate-noise", kind))
            epsilon = target.epsilon
        else:
            target = learner(split.target_train)
            if config.dp:
                params_of = lambda d: learner(d).flat_params()  # noqa: E731
                sensitivity = dp.estimate_sensitivity(
                    params_of, split.target_train, net, config.dp.sensitivity_trials, derive_seed(seed, "sens", kind)
                )
                if sensitivity > 0:
                    target, epsilon = dp.privatize_model(target, sensitivity, config.dp.scale, derive_seed(seed, "dp", kind))
                else:
                    epsilon = 0.0
        train_acc = evaluate(target, split.target_train).accuracy

        cache = {}
        for noise in config.noises:
            for attack_kind in config.attacks:
                for dist in TEST_DISTS:
                    test = tests["P"] if dist == "P" else tests[noise]
                    cache_key = (attack_kind, "P") if dist == "P" else (attack_kind, noise)
                    if cache_key not in cache:
                        sp = split if dist == "P" else atk.with_nonmembers(split, test)
                        if attack_kind == "learned":
                            cfg = config.attacker.with_seed(derive_seed(seed, "attacker", size, kind, *map(str, cache_key)))
                            report = atk.learned_attack(target, sp, cfg, config.attacker_hidden)
                        else:
                            coins = derive_seed(seed, "coins", size, kind, *map(str, cache_key))
                            report = atk.bounded_loss_attack(target, sp, coins, config.bounded_loss)
                        cache[cache_key] = (report, evaluate(target, test).accuracy)
                    report, test_acc = cache[cache_key]
                    records.append(
                        RunRecord(
                            config_hash=config_hash,
                            n_total=size,
                            n_train=len(split.target_train),
                            noise=float(noise),
                            model=kind,
                            attack=attack_kind,
                            test_dist=dist,
                            seed=seed,
                            train_acc=train_acc,
                            test_acc=test_acc,
                            attack_accuracy=report.attack_accuracy,
                            advantage=report.advantage,
                            tpr=report.tpr,
                            fpr=report.fpr,
                            n_eval=report.n_eval,
                            adv_stderr=report.advantage_stderr,
                            epsilon=epsilon,
                            adv_bound=None if epsilon is None else dp.advantage_bound(epsilon),
                        )
                    )
    return records


def _run_cell_safe(args):
    config, size, seed, config_hash = args
    try:
        return _run_cell(config, size, seed, config_hash)
    except Exception as exc:
        raise ExperimentError(f"grid cell (size={size}, seed={seed}): {exc}") from exc


def run_experiment(config: ExperimentConfig, seed_offset: int = 0, workers: int | None = None) -> list[RunRecord]:
    """Run every (size, seed) cell; rows come back sorted by grid key."""
    config_hash = config.hash()
    cells = [(config, size, seed + seed_offset, config_hash) for size in config.sizes for seed in config.seeds]
    workers = config.workers if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_safe, cells))
    else:
        results = [_run_cell_safe(c) for c in cells]
    records = [r for cell in results for r in cell]
    models, attacks = list(config.models), list(config.attacks)
    return sorted(records, key=lambda r: r.key(models, attacks))


def write_run(records, out_dir, timestamp: str | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "results.csv"
    path.write_text(records_to_csv(records, timestamp), encoding="utf-8")
    return path


# -- summaries ---------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    model: str
    attack: str
    test_dist: str
    n_total: int
    noise: float
    n_seeds: int
    attack_median: float
    attack_q1: float
    attack_q3: float
    advantage_median: float
    train_acc_median: float
    test_acc_median: float


@dataclass(frozen=True)
class Summary:
    rows: tuple[SummaryRow, ...]
    flags: tuple[str, ...]
    text: str

    def lookup(self, model, attack, test_dist, n_total, noise) -> SummaryRow:
        for r in self.rows:
            if (r.model, r.attack, r.test_dist, r.n_total, r.noise) == (model, attack, test_dist, n_total, noise):
                return r
        raise KeyError((model, attack, test_dist, n_total, noise))


def summarize(records) -> Summary:
    """Median and IQR of attack accuracy across seeds for every grid point.

    Flags any MLP whose median shifted-distribution attack accuracy decreases
    as the shift noise grows.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    groups: dict[tuple, list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.model, r.attack, r.test_dist, r.n_total, r.noise), []).append(r)
    rows = []
    for key, rs in groups.items():
        acc = np.array([r.attack_accuracy for r in rs])
        q1, q3 = np.percentile(acc, [25, 75])
        rows.append(
            SummaryRow(
                *key,
                n_seeds=len(rs),
                attack_median=float(np.median(acc)),
                attack_q1=float(q1),
                attack_q3=float(q3),
                advantage_median=float(np.median([r.advantage for r in rs])),
                train_acc_median=float(np.median([r.train_acc for r in rs])),
                test_acc_median=float(np.median([r.test_acc for r in rs])),
            )
        )
    model_order = list(dict.fromkeys(r.model for r in records))
    attack_order = list(dict.fromkeys(r.attack for r in records))
    rows.sort(key=lambda s: (s.n_total, attack_order.index(s.attack), model_order.index(s.model), s.test_dist, s.noise))

    flags = []
    for model in model_order:
        if parse_model_kind(model) != "mlp":
            continue
        for attack in attack_order:
            for n in sorted({r.n_total for r in rows}):
                curve = [r for r in rows if (r.model, r.attack, r.test_dist, r.n_total) == (model, attack, "P*", n)]
                curve.sort(key=lambda s: s.noise)
                for a, b in zip(curve, curve[1:]):
                    if b.attack_median < a.attack_median:
                        flags.append(
                            f"non-monotone: {model}/{attack} n={n} attack accuracy drops from "
                            f"{a.attack_median:.4f} (noise {a.noise:g}) to {b.attack_median:.4f} (noise {b.noise:g})"
                        )

    header = f"{'n':>8} {'model':<16} {'attack':<13} {'test':<4} {'noise':>6} {'seeds':>5} " \
             f"{'attack_acc':>10} {'IQR':>17} {'adv':>8} {'train':>7} {'test':>7}"
    lines = [header, "-" * len(header)]
    for s in rows:
        lines.append(
            f"{s.n_total:>8} {s.model:<16} {s.attack:<13} {s.test_dist:<4} {s.noise:>6g} {s.n_seeds:>5} "
            f"{s.attack_median:>10.4f} [{s.attack_q1:.4f}, {s.attack_q3:.4f}] {s.advantage_median:>8.4f} "
            f"{s.train_acc_median:>7.4f} {s.test_acc_median:>7.4f}"
        )
    lines.extend(f"WARNING {f}" for f in flags)
    return Summary(tuple(rows), tuple(flags), "\n".join(lines) + "\n")


def _plot_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in columns])
    return buf.getvalue()


def write_summary(summary: Summary, out_dir) -> list[Path]:
    """``summary.txt`` plus one plot-data CSV per figure analog."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "summary.txt": summary.text,
        # attack accuracy against shift noise (shifted non-members)
        "plot_attack_vs_noise.csv": _plot_csv(
            [r for r in summary.rows if r.test_dist == "P*"],
            ("model", "attack", "n_total", "noise", "n_seeds", "attack_median", "attack_q1", "attack_q3"),
        ),
        # attack accuracy against sample size, both test distributions
        "plot_attack_vs_size.csv": _plot_csv(
            summary.rows,
            ("model", "attack", "test_dist", "noise", "n_total", "n_seeds", "attack_median", "attack_q1", "attack_q3"),
        ),
        # target-model accuracy against sample size
        "plot_target_accuracy.csv": _plot_csv(
            summary.rows,
            ("model", "attack", "test_dist", "noise", "n_total", "train_acc_median", "test_acc_median"),
        ),
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
