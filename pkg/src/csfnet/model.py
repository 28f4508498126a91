"""CSF-Net assembly with ablation switches."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .cmaf import ClassifierHead, ClinicalEncoder, CrossModalAttention, combine, flatten_image
from .nn import Module
from .spatial import BackboneConfig, SpatialExtractor
from .tensor import Tensor
from .trf import TemporalResidualFusion


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    attn_dim: int = 32
    clinical_embed: int = 16
    head_hidden: int = 64
    upsample_factor: int = 2
    pool_kernel: int = 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return d


@dataclass(frozen=True)
class AblationFlags:
    use_t0: bool = True
    use_t1: bool = True
    use_clinical: bool = True
    use_cmaf: bool = True
    use_trf: bool = True

    def __post_init__(self):
        if not (self.use_t0 or self.use_t1):
            raise ValueError("at least one of use_t0 / use_t1 must be set")
        if self.use_trf and not (self.use_t0 and self.use_t1):
            raise ValueError("use_trf needs both timepoints")
        if self.use_cmaf and not self.use_clinical:
            raise ValueError("use_cmaf needs use_clinical")

    @property
    def two_timepoints(self) -> bool:
        return self.use_t0 and self.use_t1


class CSFNet(Module):
    """Shared backbone on t0/t1 -> temporal fusion -> cross-modal attention -> head.

    Ablations rewire the graph: a single timepoint skips fusion; without
    fusion the two maps are concatenated channel-wise; without CMAF the
    pooled image and clinical features are concatenated into the head;
    without clinical data only pooled image features reach the head.
    """

    def __init__(self, config: ModelConfig | None = None, flags: AblationFlags | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.flags = flags or AblationFlags()
        cfg, fl = self.config, self.flags
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC5F]))
        self.extractor = SpatialExtractor(cfg.backbone, rng)
        c = cfg.backbone.out_channels
        self.trf = (TemporalResidualFusion(c, rng, cfg.upsample_factor, cfg.pool_kernel)
                    if fl.use_trf else None)
        image_dim = 2 * c if fl.two_timepoints and not fl.use_trf else c
        self.encoder = ClinicalEncoder(cfg.clinical_embed, rng) if fl.use_clinical else None
        if fl.use_cmaf:
            self.cmaf = CrossModalAttention(image_dim, cfg.clinical_embed, rng, cfg.attn_dim)
            head_in = 2 * image_dim
        else:
            self.cmaf = None
            head_in = image_dim + (cfg.clinical_embed if fl.use_clinical else 0)
        self.head = ClassifierHead(head_in, rng, cfg.head_hidden)

    def image_features(self, t0: Tensor | None, t1: Tensor | None) -> Tensor:
        fl = self.flags
        f0 = self.extractor(t0) if fl.use_t0 else None
        f1 = self.extractor(t1) if fl.use_t1 else None
        if fl.use_trf:
            return self.trf(f0, f1)
        if fl.two_timepoints:
            return T.concat([f0, f1], axis=1)
        return f0 if f0 is not None else f1

    def forward(self, t0: Tensor | None, t1: Tensor | None, clinical=None) -> Tensor:
        """Logits [N, 2].  ``clinical`` holds normalized covariates [N, 4]."""
        fl = self.flags
        x = flatten_image(self.image_features(t0, t1))
        if not fl.use_clinical:
            return self.head(T.mean(x, axis=1))
        if clinical is None:
            raise ValueError("this configuration needs clinical inputs")
        y = self.encoder(clinical)
        if fl.use_cmaf:
            attended_image, attended_text = self.cmaf(x, y)
            return self.head(combine(attended_image, attended_text, x))
        return self.head(T.concat([T.mean(x, axis=1), T.mean(y, axis=1)], axis=1))

    def predict_proba(self, t0, t1, clinical=None) -> np.ndarray:
        """Malignancy probability per case."""
        logits = self.forward(_wrap(t0, self), _wrap(t1, self), clinical).data.astype(np.float64)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e[:, 1] / e.sum(axis=1)


def _wrap(volume, model: CSFNet):
    if volume is None or isinstance(volume, Tensor):
        return volume
    return Tensor(np.asarray(volume, dtype=model.head.fc1.weight.dtype))

