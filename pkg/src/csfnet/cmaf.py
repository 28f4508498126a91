"""Cross-modal attention between image positions and clinical tokens, plus the classifier head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import N_CLINICAL_FIELDS, ClinicalRecord
from .nn import Linear, Module
from .tensor import Parameter, Tensor, get_default_dtype


class ClinicalEncoder(Module):
    """Per-field affine embedding of the normalized covariates: y[n, t] = z[n, t] * W[t] + b[t]."""

    def __init__(self, embed_dim: int, rng: np.random.Generator, n_fields: int = N_CLINICAL_FIELDS):
        bound = np.sqrt(6.0 / (1 + embed_dim))
        self.n_fields = n_fields
        self.weight = Parameter(rng.uniform(-bound, bound, size=(n_fields, embed_dim)).astype(get_default_dtype()))
        self.bias = Parameter(np.zeros((n_fields, embed_dim), dtype=get_default_dtype()))

    def forward(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.weight.dtype))
        if z.ndim != 2 or z.shape[1] != self.n_fields:
            raise ValueError(f"expected normalized clinical values [N, {self.n_fields}], got {z.shape}")
        return T.reshape(z, (z.shape[0], self.n_fields, 1)) * self.weight + self.bias


def encode_clinical(records: list[ClinicalRecord], encoder: ClinicalEncoder) -> Tensor:
    """Clinical records to [N, T, E] token features."""
    for r in records:
        if not isinstance(r, ClinicalRecord):
            raise ValueError(f"expected ClinicalRecord, got {type(r).__name__}")
    return encoder(np.stack([r.normalized() for r in records]))


def flatten_image(features: Tensor) -> Tensor:
    """[N, C, D, H, W] -> [N, S, C] with S = D * H * W."""
    n, c = features.shape[:2]
    return T.transpose(T.reshape(features, (n, c, -1)), (0, 2, 1))


def unflatten_image(tokens: Tensor, spatial: tuple[int, int, int]) -> Tensor:
    n, s, c = tokens.shape
    return T.reshape(T.transpose(tokens, (0, 2, 1)), (n, c) + tuple(spatial))


@dataclass
class AttentionMaps:
    beta: np.ndarray      # [N, T, S]: clinical token j over image positions i, sums to 1 over S
    rho: np.ndarray       # [N, S, T]: image position j over clinical tokens i, sums to 1 over T
    s_scores: np.ndarray  # [N, S, T]: q1(x_i) . k2(y_j)
    t_scores: np.ndarray  # [N, T, S]: q2(y_i) . k1(x_j)


class CrossModalAttention(Module):
    """Bidirectional single-head attention.

    ``s_ij = q1(x_i)^T k2(y_j)`` is normalized over the image positions i to give
    beta, and ``t_ij = q2(y_i)^T k1(x_j)`` over the clinical tokens i to give rho.
    Text tokens read image values v1(x) through beta; image positions read
    clinical values v2(y) through rho.
    """

    def __init__(self, image_dim: int, text_dim: int, rng: np.random.Generator, attn_dim: int = 32):
        self.q1 = Linear(image_dim, attn_dim, rng)
        self.k1 = Linear(image_dim, attn_dim, rng)
        self.v1 = Linear(image_dim, image_dim, rng)
        self.q2 = Linear(text_dim, attn_dim, rng)
        self.k2 = Linear(text_dim, attn_dim, rng)
        self.v2 = Linear(text_dim, image_dim, rng)
        widths = {m.weight.shape[0] for m in (self.q1, self.k1, self.q2, self.k2)}
        if len(widths) != 1:
            raise ValueError(f"projection widths differ: {sorted(widths)}")
        self.last_maps: AttentionMaps | None = None

    def forward(self, x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
        """x: [N, S, C] image tokens, y: [N, T, E] clinical tokens -> ([N, S, C], [N, T, C])."""
        if x.ndim != 3 or y.ndim != 3 or x.shape[0] != y.shape[0]:
            raise ValueError(f"expected x [N, S, C] and y [N, T, E], got {x.shape} and {y.shape}")
        s_scores = T.matmul(self.q1(x), T.transpose(self.k2(y), (0, 2, 1)))   # [N, S, T]
        t_scores = T.matmul(self.q2(y), T.transpose(self.k1(x), (0, 2, 1)))   # [N, T, S]
        beta = T.softmax(T.transpose(s_scores, (0, 2, 1)), axis=2)            # [N, T, S]
        rho = T.softmax(T.transpose(t_scores, (0, 2, 1)), axis=2)             # [N, S, T]
        attended_text = T.matmul(beta, self.v1(x))                            # [N, T, C]
        attended_image = T.matmul(rho, self.v2(y))                            # [N, S, C]
        self.last_maps = AttentionMaps(beta.data, rho.data, s_scores.data, t_scores.data)
        return attended_image, attended_text


def cross_attention(x: Tensor, y: Tensor, proj: CrossModalAttention):
    attended_image, attended_text = proj(x, y)
    return proj.last_maps, attended_image, attended_text


class ClassifierHead(Module):
    """Two fully connected layers; the output layer starts at zero so initial logits are (0, 0)."""

    def __init__(self, in_features: int, rng: np.random.Generator, hidden: int = 64, zero_output: bool = True):
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, 2, rng)
        if zero_output:
            self.fc2.zero_()

    def forward(self, features: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(features)))


def combine(attended_image: Tensor, attended_text: Tensor, x: Tensor) -> Tensor:
    """concat(mean over S of (attended_image + X), mean over T of attended_text)."""
    if attended_image.shape != x.shape:
        raise ValueError(f"attended image {attended_image.shape} and X {x.shape} differ")
    image = T.mean(attended_image + x, axis=1)
    text = T.mean(attended_text, axis=1)
    return T.concat([image, text], axis=1)


def classify(attended_image: Tensor, attended_text: Tensor, x: Tensor, head: ClassifierHead) -> Tensor:
    return head(combine(attended_image, attended_text, x))
