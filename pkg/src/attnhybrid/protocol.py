"""The experimental protocol: grid search on 2 splits, evaluation on 10,
Welch comparisons against the plain backbone, and a byte-stable CSV report.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig
from .backbones import ArchitectureRecipe, build
from .data import AugmentPolicy, generate_toy_dataset
from .stats import welch_ttest
from .train import Hyperparameters, balanced_accuracy, predict, train_model

__all__ = [
    "ProtocolConfig",
    "parse_config",
    "parse_recipe_name",
    "split_indices",
    "TrialRow",
    "SummaryRow",
    "ComparisonRow",
    "TrialReport",
    "run_protocol",
]

_GA_DEFAULT_POSITIONS = {
    "resnet18": (1, 2),
    "mini_resnet": (2,),
    "efficientnet_b0": (2, 3),
    "mini_efficientnet": (2, 3),
}

_AUGMENT_CHOICES = ("none", "light", "full")

# seed-stream tags: split construction, model init, training order
_STREAM_SPLIT_SEARCH = 10
_STREAM_SPLIT_EVAL = 11
_STREAM_MODEL = 12
_STREAM_TRAIN = 13
_SEARCH_PHASE = 0
_EVAL_PHASE = 1


@dataclass
class ProtocolConfig:
    recipes: tuple
    learning_rates: tuple = (0.01, 0.001, 0.0001)
    weight_decays: tuple = (0.0, 0.0001, 0.001, 0.01)
    epochs_search: int = 10
    epochs_eval: int = 30
    n_per_class: int = 100
    batch_size: int = 32
    master_seed: int = 0
    alpha: float = 0.05
    search_splits: int = 2
    eval_splits: int = 10
    augment: str = "light"
    attention_k: int = 7
    attention_heads: int = 4

    def validate(self) -> "ProtocolConfig":
        if not self.recipes:
            raise ValueError("config needs at least one recipe")
        if any(lr <= 0 for lr in self.learning_rates) or not self.learning_rates:
            raise ValueError("learning_rates must be a nonempty list of positives")
        if any(wd < 0 for wd in self.weight_decays) or not self.weight_decays:
            raise ValueError("weight_decays must be a nonempty list of nonnegatives")
        for name, value in (
            ("epochs_search", self.epochs_search),
            ("epochs_eval", self.epochs_eval),
            ("n_per_class", self.n_per_class),
            ("batch_size", self.batch_size),
            ("search_splits", self.search_splits),
            ("eval_splits", self.eval_splits),
        ):
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.augment not in _AUGMENT_CHOICES:
            raise ValueError(f"augment must be one of {_AUGMENT_CHOICES}")
        for name in self.recipes:
            parse_recipe_name(name)
        return self


_LIST_FIELDS = {"recipes": str, "learning_rates": float, "weight_decays": float}
_SCALAR_FIELDS = {
    "epochs_search": int,
    "epochs_eval": int,
    "n_per_class": int,
    "batch_size": int,
    "master_seed": int,
    "alpha": float,
    "search_splits": int,
    "eval_splits": int,
    "augment": str,
    "attention_k": int,
    "attention_heads": int,
}


def parse_config(text: str) -> ProtocolConfig:
    """Flat ``key = value`` lines; lists are comma-separated; # comments."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _LIST_FIELDS:
            cast = _LIST_FIELDS[key]
            values[key] = tuple(cast(v.strip()) for v in value.split(",") if v.strip())
        elif key in _SCALAR_FIELDS:
            values[key] = _SCALAR_FIELDS[key](value)
        else:
            raise ValueError(f"unknown config key {key!r} on line {lineno}")
    if "recipes" not in values:
        raise ValueError("config must list recipes")
    return ProtocolConfig(**values).validate()


def parse_recipe_name(name: str) -> ArchitectureRecipe:
    """``backbone[+ga][+la|+ela]``, e.g. ``mini_resnet+ga+ela``."""
    tokens = name.strip().lower().split("+")
    backbone = tokens[0]
    attach = ()
    replace = "none"
    for token in tokens[1:]:
        if token == "ga":
            if backbone not in _GA_DEFAULT_POSITIONS:
                raise ValueError(f"recipe {name!r}: {backbone!r} takes no GA blocks")
            attach = _GA_DEFAULT_POSITIONS[backbone]
        elif token in ("la", "ela"):
            if replace != "none":
                raise ValueError(f"recipe {name!r} names two replacement modes")
            replace = token.upper()
        else:
            raise ValueError(
                f"recipe {name!r}: unknown token {token!r} (expected ga, la, or ela)"
            )
    return ArchitectureRecipe(
        backbone=backbone,
        attach_ga_after=attach,
        replace_last_block_with=replace,
    ).validate()


def split_indices(n: int, rng: np.random.Generator, ratios=(0.70, 0.15, 0.15)):
    """Disjoint train/val/test index arrays partitioning ``range(n)``."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    perm = rng.permutation(n)
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def _derived_int(master_seed: int, *tags: int) -> int:
    seq = np.random.SeedSequence([int(master_seed), *[int(t) for t in tags]])
    return int(np.random.default_rng(seq).integers(0, 2**31))


def _recipe_tag(name: str) -> int:
    """Stable integer identity for a recipe name; identical names always
    replay identical model/training streams, and reordering the recipe list
    does not disturb any recipe's results."""
    return zlib.crc32(name.strip().lower().encode("ascii"))


def _mean_std(values) -> tuple:
    if not values:
        return float("nan"), float("nan")
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) >= 2 else 0.0
    return mean, std


def _derived_rng(master_seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), *[int(t) for t in tags]])
    )


@dataclass
class TrialRow:
    recipe: str
    seed: int
    split: int
    bal_acc_id: float
    bal_acc_ood: float
    lr: float
    wd: float


@dataclass
class SummaryRow:
    recipe: str
    mean_id: float
    std_id: float
    mean_ood: float
    std_ood: float
    lr: float
    wd: float


@dataclass
class ComparisonRow:
    recipe_a: str
    recipe_b: str
    t: float
    p: float
    significant: bool


_TRIAL_HEADER = "recipe,seed,split,bal_acc_id,bal_acc_ood,lr,wd"
_SUMMARY_HEADER = "recipe,mean_id,std_id,mean_ood,std_ood,lr,wd"
_COMPARISON_HEADER = "recipe_a,recipe_b,t,p,significant"


@dataclass
class TrialReport:
    trial_rows: list = field(default_factory=list)
    summary_rows: list = field(default_factory=list)
    comparison_rows: list = field(default_factory=list)
    alpha: float = 0.05
    chosen: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [_TRIAL_HEADER]
        for r in self.trial_rows:
            lines.append(
                f"{r.recipe},{r.seed},{r.split},{r.bal_acc_id:.6f},"
                f"{r.bal_acc_ood:.6f},{r.lr!r},{r.wd!r}"
            )
        lines.append(_SUMMARY_HEADER)
        for s in self.summary_rows:
            lines.append(
                f"{s.recipe},{s.mean_id:.6f},{s.std_id:.6f},"
                f"{s.mean_ood:.6f},{s.std_ood:.6f},{s.lr!r},{s.wd!r}"
            )
        lines.append(_COMPARISON_HEADER)
        for c in self.comparison_rows:
            flag = "true" if c.significant else "false"
            lines.append(f"{c.recipe_a},{c.recipe_b},{c.t:.6f},{c.p:.6g},{flag}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def _attention_config(recipe: ArchitectureRecipe, config: ProtocolConfig):
    kind = (
        recipe.replace_last_block_with
        if recipe.replace_last_block_with != "none"
        else "GA"
    )
    return AttentionConfig(
        kind=kind, k=config.attention_k, heads=config.attention_heads
    )


def run_protocol(config: ProtocolConfig, progress=None) -> TrialReport:
    """Grid-search each recipe on the search splits, evaluate the winner on
    the eval splits, and compare every hybrid against its plain backbone."""
    config.validate()
    say = progress if progress is not None else lambda _msg: None
    policy = {
        "none": None,
        "light": AugmentPolicy.light(),
        "full": AugmentPolicy(),
    }[config.augment]
    data_id = generate_toy_dataset(config.master_seed, config.n_per_class)
    data_ood = generate_toy_dataset(config.master_seed, config.n_per_class, ood=True)
    n = len(data_id)
    classes = data_id.class_count
    search_splits = [
        split_indices(n, _derived_rng(config.master_seed, _STREAM_SPLIT_SEARCH, s))
        for s in range(config.search_splits)
    ]
    eval_splits = [
        split_indices(n, _derived_rng(config.master_seed, _STREAM_SPLIT_EVAL, s))
        for s in range(config.eval_splits)
    ]

    report = TrialReport(alpha=config.alpha)
    id_samples: dict[str, list] = {}
    for name in config.recipes:
        recipe = parse_recipe_name(name)
        r_i = _recipe_tag(name)
        attn_cfg = _attention_config(recipe, config)

        best = None  # (mean val accuracy, lr, wd)
        for lr in sorted(config.learning_rates):
            for wd in sorted(config.weight_decays):
                accs = []
                for s, (train_idx, val_idx, _) in enumerate(search_splits):
                    model = build(
                        recipe,
                        seed=_derived_int(
                            config.master_seed, _STREAM_MODEL, r_i, _SEARCH_PHASE, s
                        ),
                        config=attn_cfg,
                    )
                    hp = Hyperparameters(
                        learning_rate=lr,
                        weight_decay=wd,
                        batch_size=config.batch_size,
                        epochs=config.epochs_search,
                        seed=_derived_int(
                            config.master_seed, _STREAM_TRAIN, r_i, _SEARCH_PHASE, s
                        ),
                    )
                    run = train_model(model, data_id.subset(train_idx), hp, policy)
                    if run.diverged:
                        accs = None
                        break
                    preds = predict(model, data_id.images[val_idx])
                    accs.append(
                        balanced_accuracy(preds, data_id.labels[val_idx], classes)
                    )
                if accs is None:
                    say(f"{name}: lr={lr} wd={wd} diverged during search")
                    continue
                mean_acc = float(np.mean(accs))
                say(f"{name}: lr={lr} wd={wd} mean val acc {mean_acc:.4f}")
                if best is None or mean_acc > best[0]:
                    best = (mean_acc, lr, wd)
        if best is None:
            raise RuntimeError(f"every grid configuration diverged for {name!r}")
        _, lr, wd = best
        report.chosen[name] = (lr, wd)
        say(f"{name}: selected lr={lr} wd={wd}")

        accs_id, accs_ood = [], []
        for s, (train_idx, _, test_idx) in enumerate(eval_splits):
            model_seed = _derived_int(
                config.master_seed, _STREAM_MODEL, r_i, _EVAL_PHASE, s
            )
            model = build(recipe, seed=model_seed, config=attn_cfg)
            hp = Hyperparameters(
                learning_rate=lr,
                weight_decay=wd,
                batch_size=config.batch_size,
                epochs=config.epochs_eval,
                seed=_derived_int(
                    config.master_seed, _STREAM_TRAIN, r_i, _EVAL_PHASE, s
                ),
            )
            run = train_model(model, data_id.subset(train_idx), hp, policy)
            if run.diverged:
                bal_id = bal_ood = float("nan")
                say(f"{name}: eval split {s} diverged")
            else:
                bal_id = balanced_accuracy(
                    predict(model, data_id.images[test_idx]),
                    data_id.labels[test_idx],
                    classes,
                )
                bal_ood = balanced_accuracy(
                    predict(model, data_ood.images[test_idx]),
                    data_ood.labels[test_idx],
                    classes,
                )
                accs_id.append(bal_id)
                accs_ood.append(bal_ood)
            report.trial_rows.append(
                TrialRow(
                    recipe=name,
                    seed=model_seed,
                    split=s,
                    bal_acc_id=bal_id,
                    bal_acc_ood=bal_ood,
                    lr=lr,
                    wd=wd,
                )
            )
        id_samples[name] = accs_id

        mean_id, std_id = _mean_std(accs_id)
        mean_ood, std_ood = _mean_std(accs_ood)
        report.summary_rows.append(
            SummaryRow(
                recipe=name,
                mean_id=mean_id,
                std_id=std_id,
                mean_ood=mean_ood,
                std_ood=std_ood,
                lr=lr,
                wd=wd,
            )
        )
        say(
            f"{name}: eval mean id {report.summary_rows[-1].mean_id:.4f} "
            f"ood {report.summary_rows[-1].mean_ood:.4f}"
        )

    for name in config.recipes:
        base = name.split("+")[0]
        if base == name or base not in config.recipes:
            continue
        a = id_samples[name]
        b = id_samples[base]
        if len(a) < 2 or len(b) < 2:
            report.comparison_rows.append(
                ComparisonRow(name, base, float("nan"), float("nan"), False)
            )
            continue
        result = welch_ttest(a, b)
        report.comparison_rows.append(
            ComparisonRow(
                recipe_a=name,
                recipe_b=base,
                t=result.t,
                p=result.p,
                significant=result.p < config.alpha,
            )
        )
    return report
