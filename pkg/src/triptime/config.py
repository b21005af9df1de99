"""Flat key/value configuration files (TOML-style scalars and lists).

Example::

    # pipeline parameters
    bbox = [40.70, 40.88, -74.03, -73.90]
    cell_size = 50
    tau = 3
    methods = ["lr", "avg", "temp_rel"]
    train_start = "2013-01-01T00:00:00"

Flags given on the command line override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .core import GeoBoundingBox, TimeSlotConfig
from .errors import ConfigError
from .ingest import TripRecordSchema, parse_datetime
from .outliers import FeaturePair, default_feature_pairs


def parse_value(text: str):
    text = text.strip()
    if not text:
        raise ConfigError("empty value")
    if text[0] in "\"'":
        if len(text) < 2 or text[-1] != text[0]:
            raise ConfigError(f"unterminated string: {text}")
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    if text[0] == "[":
        if text[-1] != "]":
            raise ConfigError(f"unterminated list: {text}")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [parse_value(part) for part in _split_list(inner)]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _split_list(inner: str) -> list[str]:
    parts, depth, quote, cur = [], 0, None, []
    for ch in inner:
        if quote:
            cur.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
            cur.append(ch)
        elif ch == "[":
            depth += 1
            cur.append(ch)
        elif ch == "]":
            depth -= 1
            cur.append(ch)
        elif ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return parts


def parse_flat_config(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment outside quotes."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        try:
            out[key] = parse_value(value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return out


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


@dataclass
class Config:
    """Pipeline configuration; every default traces to the documented
    operating point of the method."""

    bbox: GeoBoundingBox | None = None
    cell_size: float = 50.0
    tau: int = 3
    slot_seconds: int = 3600
    period_slots: int = 168
    timezone_offset: int = 0
    arima_order: tuple[int, int, int] = (2, 1, 0)
    region_cols: int = 8
    region_rows: int = 8
    min_support: int = 10
    filter_pairs: list[str] = field(default_factory=list)
    apply_filter: bool = False
    methods: list[str] = field(default_factory=lambda: ["lr", "avg", "temp_rel"])
    scale_clamp: tuple[float, float] = (0.2, 5.0)
    weighted: bool = False
    fallback: str = "none"
    thread_count: int = 1
    seed: int = 0
    train_start: str | None = None
    train_end: str | None = None
    test_start: str | None = None
    test_end: str | None = None
    subsample: int | None = None
    columns: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "Config":
        with open(path) as fh:
            raw = parse_flat_config(fh.read())
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        kwargs: dict = {}
        columns: dict = {}
        for key, value in raw.items():
            if key.startswith("col_"):
                columns[key[4:]] = value
                continue
            if key == "bbox":
                if not (isinstance(value, list) and len(value) == 4):
                    raise ConfigError("bbox must be [lat_min, lat_max, lon_min, lon_max]")
                kwargs["bbox"] = GeoBoundingBox(*[float(v) for v in value])
            elif key == "arima_order":
                kwargs["arima_order"] = tuple(int(v) for v in value)
            elif key == "scale_clamp":
                kwargs["scale_clamp"] = tuple(float(v) for v in value)
            elif key in known and key != "columns":
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        cfg = cls(**kwargs, columns=columns)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.cell_size <= 0:
            raise ConfigError("cell_size must be positive")
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.min_support < 1:
            raise ConfigError("min_support must be >= 1")
        if self.fallback not in ("none", "lr"):
            raise ConfigError("fallback must be 'none' or 'lr'")
        if len(self.arima_order) != 3:
            raise ConfigError("arima_order must have three components")

    def slot_config(self) -> TimeSlotConfig:
        return TimeSlotConfig(slot_seconds=self.slot_seconds,
                              period_slots=self.period_slots,
                              timezone_offset=self.timezone_offset)

    def schema(self) -> TripRecordSchema:
        return TripRecordSchema(**self.columns) if self.columns else TripRecordSchema()

    def feature_pairs(self, with_fare: bool = True) -> list[FeaturePair]:
        if self.filter_pairs:
            return [FeaturePair.parse(p) for p in self.filter_pairs]
        return default_feature_pairs(with_fare)

    def split_epochs(self) -> tuple[float, float, float, float]:
        stamps = (self.train_start, self.train_end, self.test_start, self.test_end)
        if any(s is None for s in stamps):
            raise ConfigError(
                "train_start, train_end, test_start and test_end are required to evaluate")
        return tuple(parse_datetime(s) for s in stamps)  # type: ignore[return-value]
