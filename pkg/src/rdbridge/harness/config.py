"""Training configuration and its ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..exceptions import ConfigError

ABLATIONS = {
    # name: (cmaa_enabled, (cross, cls, consist))
    "frozen": (False, (True, False, False)),
    "cmaa": (True, (True, False, False)),
    "cross": (True, (True, False, False)),
    "cross+cls": (True, (True, True, False)),
    "cross+consist": (True, (True, False, True)),
    "full": (True, (True, True, True)),
}


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    Defaults follow the full-size setting (512-d common space, 64-wide
    bottleneck, 30 epochs at 2e-4). :meth:`desk` gives the small CPU setting
    used by the test suite.
    """

    lr: float = 2e-4
    lr_decay: float = 0.7
    decay_every_epochs: int = 20
    batch_size: int = 32
    epochs: int = 30
    margin: float = 0.2
    dropout: float = 0.2
    d_common: int = 512
    d_bottleneck: int = 64
    lambda_init: float = 0.8
    ema_decay: float = 0.999
    seed: int = 0
    loss_mask: tuple = (True, True, True)
    cmaa_enabled: bool = True
    insertion_plan: str = "all"
    k_folds: int = 1
    fold: int = 0
    n_blocks: int = 2
    ffn_mult: int = 4
    encoder_seed: int = 1234
    pooling: str = "mean"
    hardest_negative: bool = False
    dtype: str = "float64"
    data: str = ""
    output: str = "model.ckpt"
    preset: str = "full"

    def __post_init__(self):
        self.loss_mask = tuple(bool(b) for b in self.loss_mask)
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> TrainConfig:
        """Small CPU-sized defaults; ``overrides`` win."""
        base = dict(d_common=32, d_bottleneck=8, epochs=10, lr=2e-3, ema_decay=0.99, preset="desk")
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        checks = [
            (self.lr > 0, "lr must be positive"),
            (0 < self.lr_decay <= 1, "lr_decay must lie in (0, 1]"),
            (self.decay_every_epochs >= 1, "decay_every_epochs must be >= 1"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.margin >= 0, "margin must be >= 0"),
            (0 <= self.dropout < 1, "dropout must lie in [0, 1)"),
            (self.d_common >= 1, "d_common must be >= 1"),
            (self.d_bottleneck >= 2 and self.d_bottleneck % 2 == 0, "d_bottleneck must be even and >= 2"),
            (0 < self.lambda_init < 1, "lambda_init must lie in (0, 1)"),
            (0 <= self.ema_decay <= 1, "ema_decay must lie in [0, 1]"),
            (len(self.loss_mask) == 3, "loss_mask needs three flags (cross, cls, consist)"),
            (self.loss_mask[0], "the cross-modal loss must stay enabled"),
            (self.k_folds >= 1, "k_folds must be >= 1"),
            (0 <= self.fold < self.k_folds, "fold must lie in [0, k_folds)"),
            (self.n_blocks >= 0, "n_blocks must be >= 0"),
            (self.pooling in ("mean", "cls"), "pooling must be 'mean' or 'cls'"),
            (self.dtype in ("float64", "float32"), "dtype must be float64 or float32"),
            (self.preset in ("full", "desk"), "preset must be 'full' or 'desk'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def n_losses(self) -> int:
        return sum(self.loss_mask)

    def with_ablation(self, name: str) -> TrainConfig:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        cmaa, mask = ABLATIONS[name]
        return dataclasses.replace(self, cmaa_enabled=cmaa, loss_mask=mask)

    def lr_at_epoch(self, epoch: int) -> float:
        """Step schedule: ``lr * lr_decay ** (epoch // decay_every_epochs)``."""
        return self.lr * self.lr_decay ** (epoch // self.decay_every_epochs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loss_mask"] = list(self.loss_mask)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "loss_mask":
                v = ",".join(n for n, on in zip(("cross", "cls", "consist"), v) if on)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_TYPES = {name: type(getattr(TrainConfig, name, None)) for name in _FIELDS if name != "loss_mask"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_loss_mask(text: str) -> tuple:
    t = text.strip().lower().replace("+", ",")
    parts = t.replace(",", " ").split()
    if parts and all(p in ("0", "1", "true", "false") for p in parts) and len(parts) == 3:
        return tuple(_parse_bool(p) for p in parts)
    names = set(parts)
    bad = names - {"cross", "cls", "consist"}
    if bad:
        raise ValueError(f"unknown loss names {sorted(bad)}")
    return ("cross" in names, "cls" in names, "consist" in names)


def parse_config_text(text: str, source: str = "<config>") -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors.

    A ``preset = desk`` line selects the desk defaults before other keys apply.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            if key == "loss_mask":
                values[key] = _parse_loss_mask(val)
            elif _TYPES[key] is bool:
                values[key] = _parse_bool(val)
            elif _TYPES[key] is int:
                values[key] = int(val)
            elif _TYPES[key] is float:
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    preset = values.get("preset", "full")
    if preset == "desk":
        return TrainConfig.desk(**values)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))
