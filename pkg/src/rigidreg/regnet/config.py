from __future__ import annotations

from dataclasses import asdict, dataclass

ROTATION_SIZES = {"lie": 3, "quaternion": 4, "linear": 9}
METRICS = ("l1", "l2", "weighted_l2", "geman_mcclure")


@dataclass(frozen=True)
class RegNetConfig:
    """Architecture of one network.

    ``blocks`` is the number C of residual blocks; the DNN head needs C >= 2 so
    that the 3x3 kernel fits the C+1 pooled stages.
    """

    blocks: int = 8
    width: int = 128
    rotation: str = "lie"
    head: str = "dnn"
    conv_channels: int = 8
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 2)  # (stage row, feature column)
    hidden: int = 256
    threshold: float = 0.5

    def __post_init__(self):
        if self.blocks < 1 or self.width < 1 or self.hidden < 1 or self.conv_channels < 1:
            raise ValueError("blocks and widths must be >= 1")
        if self.rotation not in ROTATION_SIZES:
            raise ValueError(f"unknown rotation mode {self.rotation!r}")
        if self.head not in ("dnn", "procrustes"):
            raise ValueError(f"unknown head {self.head!r}")
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError("threshold must lie in [0, 1)")
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "stride", tuple(self.stride))
        if self.head == "dnn":
            if self.blocks + 1 < self.kernel[0] or self.width < self.kernel[1]:
                raise ValueError(f"C+1={self.blocks + 1} pooled stages do not fit a {self.kernel} kernel")

    @property
    def rot_size(self) -> int:
        return ROTATION_SIZES[self.rotation]

    @property
    def conv_out(self) -> tuple[int, int]:
        kh, kw = self.kernel
        sh, sw = self.stride
        return ((self.blocks + 1 - kh) // sh + 1, (self.width - kw) // sw + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        d["stride"] = list(self.stride)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RegNetConfig:
        return cls(**d)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    beta: float = 1e-3
    metric: str = "l1"
    mu: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
