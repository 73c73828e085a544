"""Pipeline configuration as one JSON document."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .segmentation import SegParams
from .vesselness import DEFAULT_SCALES, VesselnessParams
from .wavelets import CakeParams

__all__ = ["PipelineConfig", "IOConfig", "MultiScaleConfig", "load_config", "save_config"]


@dataclass(frozen=True)
class MultiScaleConfig:
    """Scale axis of the multi-scale bank; ``None`` windows use the built-in defaults."""

    scales: tuple = DEFAULT_SCALES
    n_rho: int = 8
    window_sx: float | None = None
    window_sy: float | None = None
    use_window: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(a) for a in self.scales))
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])) or not self.scales:
            raise ValueError("scales must be a non-empty strictly increasing list")
        if self.n_rho < len(self.scales):
            raise ValueError("n_rho must be at least the number of active scales")


@dataclass(frozen=True)
class IOConfig:
    input: str | None = None
    output: str | None = None
    cache_dir: str | None = None
    channel: str = "green"


_SECTIONS = {
    "cake": CakeParams,
    "multiscale": MultiScaleConfig,
    "vesselness": VesselnessParams,
    "segmentation": SegParams,
    "io": IOConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline settings; defaults are the reference settings.

    ``vesselness.scales`` and ``vesselness.n_orient`` are kept equal to
    ``multiscale.scales`` and ``cake.n_orient``.
    """

    cake: CakeParams = field(default_factory=CakeParams)
    multiscale: MultiScaleConfig = field(default_factory=MultiScaleConfig)
    vesselness: VesselnessParams = field(default_factory=VesselnessParams)
    segmentation: SegParams = field(default_factory=SegParams)
    io: IOConfig = field(default_factory=IOConfig)

    def __post_init__(self):
        if tuple(self.vesselness.scales) != tuple(self.multiscale.scales):
            raise ValueError("vesselness.scales must equal multiscale.scales")
        if self.vesselness.n_orient != self.cake.n_orient:
            raise ValueError("vesselness.n_orient must equal cake.n_orient")

    def to_dict(self):
        out = {}
        for name in _SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        """Build from a (possibly partial) mapping; unknown keys raise ``ValueError``."""
        if not isinstance(data, dict):
            raise ValueError("configuration must be a JSON object")
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown configuration sections: {sorted(unknown)}")
        data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
        # scale list and orientation count live in two sections; fill the missing side
        for a, b, key in (("multiscale", "vesselness", "scales"), ("cake", "vesselness", "n_orient")):
            sa, sb = data.setdefault(a, {}), data.setdefault(b, {})
            if isinstance(sa, dict) and isinstance(sb, dict):
                if key in sa and key not in sb:
                    sb[key] = sa[key]
                elif key in sb and key not in sa:
                    sa[key] = sb[key]
        kw = {}
        for name, typ in _SECTIONS.items():
            sec = data.get(name, {})
            if not isinstance(sec, dict):
                raise ValueError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(typ)}
            bad = set(sec) - allowed
            if bad:
                raise ValueError(f"unknown keys in {name!r}: {sorted(bad)}")
            kw[name] = typ(**sec)
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def load_config(path):
    return PipelineConfig.from_json(Path(path).read_text())


def save_config(cfg, path):
    Path(path).write_text(cfg.to_json() + "\n")
