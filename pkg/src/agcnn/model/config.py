"""Architecture configuration and the ablation grid."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Tuple

from agcnn.errors import ConfigError

# Table 4 rows: name -> (use_attention, use_localization, multiscale)
ABLATIONS = {
    "full": (True, True, True),
    "aps-only": (True, False, True),
    "pal-only": (False, True, True),
    "none": (False, False, True),
    "plain-blocks": (True, True, False),
}

ABLATION_LABELS = {
    "full": "Full AG-CNN",
    "aps-only": "W APS W/O PAL",
    "pal-only": "W/O APS W PAL",
    "none": "W/O APS W/O PAL",
    "plain-blocks": "W/O multi-scale block",
}


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    widths: Tuple[int, int, int, int] = (64, 128, 256, 512)
    kernel_menu: Tuple[int, int, int, int] = (1, 3, 5, 7)
    theta: float = 0.5
    fn_channels: int = 128
    decoder_channels: Tuple[int, int, int, int, int] = (256, 128, 64, 32, 16)
    fc_hidden: int = 128
    use_attention: bool = True
    use_localization: bool = True
    multiscale: bool = True

    def __post_init__(self):
        for name in ("widths", "kernel_menu", "decoder_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        s = self.image_size
        if s < 32 or s % 8:
            raise ConfigError(f"image size must be a multiple of 8 and at least 32, got {s}")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if len(self.kernel_menu) != 4 or any(k < 1 or k % 2 == 0 for k in self.kernel_menu):
            raise ConfigError(f"kernel menu needs 4 odd sizes, got {self.kernel_menu}")
        if len(self.widths) != 4 or len(self.decoder_channels) != 5:
            raise ConfigError("need 4 stage widths and 5 decoder widths")
        if self.multiscale and any(w % 4 for w in self.widths):
            raise ConfigError(f"multi-scale stage widths must be divisible by 4: {self.widths}")
        if min(self.widths + self.decoder_channels + (self.fn_channels, self.fc_hidden)) < 1:
            raise ConfigError("channel counts must be positive")

    @property
    def attention_size(self) -> int:
        return self.image_size // 2

    @property
    def fn_grid(self) -> int:
        return self.image_size // 8

    @classmethod
    def desk(cls, image_size: int = 56, **kw) -> "ModelConfig":
        """Quarter-width network for single-core runs."""
        return cls(image_size=image_size, widths=(16, 32, 64, 128), fn_channels=32,
                   decoder_channels=(64, 32, 16, 8, 4), fc_hidden=32, **kw)

    def with_ablation(self, name: str) -> "ModelConfig":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        att, loc, ms = ABLATIONS[name]
        return replace(self, use_attention=att, use_localization=loc, multiscale=ms)

    @property
    def ablation(self) -> str:
        key = (self.use_attention, self.use_localization, self.multiscale)
        for name, flags in ABLATIONS.items():
            if flags == key:
                return name
        return "custom"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))
