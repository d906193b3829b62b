"""Run configuration: ``key = value`` files with command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .transforms import DEFAULT_LADDERS, KINDS, Kind, check_ladders


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


@dataclass
class RunConfig:
    corpus_dir: Path = Path("corpus")
    work_dir: Path = Path("work")
    light_ladder: tuple = DEFAULT_LADDERS[Kind.LIGHT]
    blur_ladder: tuple = DEFAULT_LADDERS[Kind.BLUR]
    jpeg_ladder: tuple = DEFAULT_LADDERS[Kind.JPEG]
    lam: float = 1e-5
    epochs: int = 1000
    type_multi_class: str = "ovr"
    amount_multi_class: str = "crammer_singer"
    jpeg_normalized: bool = False
    eps: float = 2.0
    detectors: tuple = ("harris", "dog")
    external: dict = field(default_factory=dict)
    timeout: float = 60.0
    failure_tolerance: float = 0.0
    seed: int = 0
    workers: int = 1
    train_fraction: float = 0.6
    scene_size: int = 256
    fallback: bool = False

    @property
    def ladders(self) -> dict:
        return {Kind.LIGHT: tuple(self.light_ladder), Kind.BLUR: tuple(self.blur_ladder), Kind.JPEG: tuple(self.jpeg_ladder)}

    def validate(self) -> RunConfig:
        try:
            check_ladders(self.ladders)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not 0 <= self.failure_tolerance <= 1:
            raise ConfigError("failure_tolerance must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for kind in KINDS:
            if kind is Kind.LIGHT and not all(0 <= a < 100 for a in self.ladders[kind]):
                raise ConfigError("light ladder amounts must lie in [0, 100)")
        return self

    @property
    def dataset_dir(self) -> Path:
        return self.work_dir / "dataset"

    @property
    def manifest_path(self) -> Path:
        return self.dataset_dir / "manifest.csv"

    @property
    def model_dir(self) -> Path:
        return self.work_dir / "models"


_PARSERS = {
    "corpus_dir": Path,
    "work_dir": Path,
    "light_ladder": _floats,
    "blur_ladder": _floats,
    "jpeg_ladder": _floats,
    "lam": float,
    "epochs": int,
    "type_multi_class": str,
    "amount_multi_class": str,
    "jpeg_normalized": lambda v: _bool(v),
    "eps": float,
    "detectors": lambda v: tuple(n.strip() for n in v.split(",") if n.strip()),
    "timeout": float,
    "failure_tolerance": float,
    "seed": int,
    "workers": int,
    "train_fraction": float,
    "scene_size": int,
    "fallback": lambda v: _bool(v),
}
KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "external")


def _bool(v: str) -> bool:
    low = str(v).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_config_text(text: str, base_dir: str | os.PathLike = ".") -> dict:
    """Parse ``key = value`` lines; ``external.NAME = template`` adds an external detector."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("external."):
            values.setdefault("external", {})[key.split(".", 1)[1]] = value
            continue
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if isinstance(parsed, Path) and not parsed.is_absolute():
            parsed = Path(base_dir) / parsed
        values[key] = parsed
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text, path.parent))
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key == "external":
            values.setdefault("external", {}).update(raw)
        elif isinstance(raw, str):
            try:
                values[key] = _PARSERS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for --{key}: {exc}") from None
        else:
            values[key] = raw
    return RunConfig(**values).validate()
