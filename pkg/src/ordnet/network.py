"""Backbone stub -> {MR, RLR} -> fusion + residual -> FCN head -> x8 upsample."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ordnet import otns
from ordnet import tensor as T
from ordnet.attention import AttentionParams, self_attention
from ordnet.errors import ArgumentError, DimensionError, FormatError
from ordnet.mr_branch import MRConfig, middle_range
from ordnet.rlr_branch import RLRConfig, reweighed_long_range
from ordnet.tensor import Tensor

STRIDE = 8
LONG_RANGE = ("rlr", "sa", "none")
FUSIONS = ("concat_conv", "sum")

# ablation rows as (use_mr, long_range)
VARIANTS = {
    "fcn": (False, "none"),
    "basic_sa": (False, "sa"),
    "sa_mr": (True, "sa"),
    "sa_rlr": (False, "rlr"),
    "ordnet": (True, "rlr"),
}


@dataclass
class OrdNetConfig:
    num_classes: int = 4
    in_channels: int = 3
    backbone_widths: tuple = (16, 32, 64)
    cq: int = 8
    cv: int = 16
    use_mr: bool = True
    long_range: str = "rlr"
    mr: MRConfig = field(default_factory=MRConfig)
    rlr: RLRConfig = field(default_factory=RLRConfig)
    fusion: str = "concat_conv"
    head_hidden: Optional[int] = None  # defaults to C
    activation: str = "relu"
    zero_init_fusion: bool = True

    def __post_init__(self):
        self.backbone_widths = tuple(int(c) for c in self.backbone_widths)
        if isinstance(self.mr, dict):
            self.mr = MRConfig(**self.mr)
        if isinstance(self.rlr, dict):
            self.rlr = RLRConfig(**self.rlr)
        if self.num_classes < 2:
            raise ArgumentError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.backbone_widths) != 3:
            raise ArgumentError("backbone needs exactly three stage widths (stride 8)")
        if self.long_range not in LONG_RANGE:
            raise ArgumentError(f"long_range must be one of {LONG_RANGE}")
        if self.fusion not in FUSIONS:
            raise ArgumentError(f"fusion must be one of {FUSIONS}")
        if self.activation not in ("relu", "tanh"):
            raise ArgumentError(f"activation must be relu or tanh, got {self.activation!r}")

    @property
    def channels(self) -> int:
        return self.backbone_widths[-1]

    @property
    def hidden(self) -> int:
        return self.head_hidden or self.channels

    @property
    def n_branches(self) -> int:
        return int(self.use_mr) + int(self.long_range != "none")

    def variant(self, name: str) -> "OrdNetConfig":
        """Copy of this config rewired to one row of the ablation lattice."""
        try:
            use_mr, long_range = VARIANTS[name]
        except KeyError:
            raise ArgumentError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None
        return replace(self, use_mr=use_mr, long_range=long_range)

    def to_dict(self) -> dict:
        return asdict(self)


def _act(x: Tensor, kind: str) -> Tensor:
    return T.relu(x) if kind == "relu" else T.tanh(x)


def _conv_init(rng, kh, kw, cin, cout) -> Tensor:
    std = np.sqrt(2.0 / (kh * kw * cin))
    return Tensor(rng.normal(0.0, std, size=(kh, kw, cin, cout)), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def backbone_stub(image: Tensor, weights: Sequence[tuple], activation: str = "relu") -> Tensor:
    """Three stride-2 3x3 conv stages; ``H x W x 3`` -> ``H/8 x W/8 x C``."""
    h, w = image.shape[:2]
    if h % STRIDE or w % STRIDE:
        raise ArgumentError(f"image extents {h}x{w} must be divisible by {STRIDE}")
    x = image
    for wt, b in weights:
        x = _act(T.conv2d(x, wt, b, stride=2, padding=1), activation)
    return x


def fuse(branches: Sequence[Tensor], x: Tensor, mode: str = "concat_conv",
         weight: Optional[Tensor] = None, bias: Optional[Tensor] = None) -> Tensor:
    """Merge branch outputs and add the shortcut from ``x``.

    concat_conv: ``conv1x1(concat(branches)) + x``; sum: ``sum(branches) + x``.
    """
    for z in branches:
        if z.shape != x.shape:
            raise DimensionError(f"branch output {z.shape} does not match input feature {x.shape}")
    if not branches:
        return x
    if mode == "sum":
        out = x
        for z in branches:
            out = T.add(out, z)
        return out
    if mode != "concat_conv":
        raise ArgumentError(f"unknown fusion mode {mode!r}")
    cat = branches[0] if len(branches) == 1 else T.concat(list(branches), axis=-1)
    return T.add(T.conv1x1(cat, weight, bias), x)


def fcn_head(f: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, activation: str = "relu") -> Tensor:
    """3x3 conv + nonlinearity + 1x1 conv to K class logits."""
    hid = _act(T.conv2d(f, w1, b1, stride=1, padding=1), activation)
    return T.conv1x1(hid, w2, b2)


class OrdNet:
    """Parameters plus forward pass for one :class:`OrdNetConfig`."""

    def __init__(self, cfg: OrdNetConfig = None, seed: int = 0):
        self.cfg = cfg = cfg or OrdNetConfig()
        rng = np.random.default_rng(seed)
        p: dict = {}
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.backbone_widths, 1):
            p[f"backbone.conv{i}.weight"] = _conv_init(rng, 3, 3, cin, cout)
            p[f"backbone.conv{i}.bias"] = _zeros(cout)
            cin = cout
        c = cfg.channels
        self.mr_attn = self.lr_attn = None
        if cfg.use_mr:
            self.mr_attn = AttentionParams.init(c, cfg.cq, cfg.cv, rng)
            p.update(self.mr_attn.named_parameters("mr."))
        if cfg.long_range != "none":
            self.lr_attn = AttentionParams.init(c, cfg.cq, cfg.cv, rng)
            p.update(self.lr_attn.named_parameters(f"{cfg.long_range}."))
        if cfg.fusion == "concat_conv" and cfg.n_branches:
            nin = c * cfg.n_branches
            if cfg.zero_init_fusion:
                p["fusion.weight"] = _zeros(nin, c)
            else:
                p["fusion.weight"] = Tensor(rng.normal(0, 1 / np.sqrt(nin), size=(nin, c)), requires_grad=True)
            p["fusion.bias"] = _zeros(c)
        hid, k = cfg.hidden, cfg.num_classes
        p["head.conv1.weight"] = _conv_init(rng, 3, 3, c, hid)
        p["head.conv1.bias"] = _zeros(hid)
        p["head.conv2.weight"] = Tensor(rng.normal(0, 1 / np.sqrt(hid), size=(hid, k)), requires_grad=True)
        p["head.conv2.bias"] = _zeros(k)
        for name, t in p.items():
            t.name = name
        self.params = p

    # parameters -----------------------------------------------------------

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise FormatError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise FormatError(f"{k}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data[...] = arr

    def save(self, directory) -> None:
        otns.save_checkpoint(directory, self.state_dict())
        Path(directory, "config.json").write_text(json.dumps(self.cfg.to_dict(), indent=2))

    @classmethod
    def load(cls, directory) -> "OrdNet":
        try:
            cfg = OrdNetConfig(**json.loads(Path(directory, "config.json").read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise FormatError(f"cannot read model config in {directory}: {exc}") from exc
        model = cls(cfg)
        model.load_state_dict(otns.load_checkpoint(directory))
        return model

    # forward --------------------------------------------------------------

    def features(self, image: Tensor) -> Tensor:
        p = self.params
        stages = [(p[f"backbone.conv{i}.weight"], p[f"backbone.conv{i}.bias"]) for i in (1, 2, 3)]
        return backbone_stub(image, stages, self.cfg.activation)

    def branches(self, x: Tensor) -> list:
        cfg = self.cfg
        out = []
        if cfg.use_mr:
            out.append(middle_range(x, self.mr_attn, cfg.mr))
        if cfg.long_range == "rlr":
            out.append(reweighed_long_range(x, self.lr_attn, cfg.rlr)[0])
        elif cfg.long_range == "sa":
            out.append(self_attention(x, self.lr_attn).y)
        return out

    def head(self, f: Tensor) -> Tensor:
        p = self.params
        return fcn_head(f, p["head.conv1.weight"], p["head.conv1.bias"], p["head.conv2.weight"],
                        p["head.conv2.bias"], self.cfg.activation)

    def forward(self, image) -> Tensor:
        image = image if isinstance(image, Tensor) else Tensor(image)
        x = self.features(image)
        fused = fuse(self.branches(x), x, self.cfg.fusion, self.params.get("fusion.weight"),
                     self.params.get("fusion.bias"))
        return T.upsample_bilinear(self.head(fused), STRIDE)

    __call__ = forward


def ordnet_forward(image, model: OrdNet) -> Tensor:
    """Logits at input resolution, ``H_img x W_img x K``."""
    return model.forward(image)
