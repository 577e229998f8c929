"""
Modèle partagé F : projection, encodeur transformer à attention masquée par
l'alignement, et trois têtes (frames, phrases, régression des scores de relecture).
"""
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..exceptions import DimensionMismatchError
from .alignment import (
    MODE_CHILD,
    MODE_PARENT,
    AlignmentMask,
    FusedSequence,
    InputProjection,
    build_fused_sequence,
)
from .dataset import VideoSample
from .pydantic_models import ModelConfig

# Constante ajoutée aux logits bloqués avant le softmax
MASK_FILL_VALUE = -1e9
INIT_STD = 0.02


def masked_attention(queries, keys, values, mask, return_weights: bool = False):
    """
    Attention produit scalaire normalisée avec masque binaire [T x T]
    (True = permis). Les poids bloqués valent 0 après le softmax.
    """
    if isinstance(mask, AlignmentMask):
        mask = mask.mask
    mask = torch.as_tensor(mask, dtype=torch.bool, device=queries.device)

    if queries.shape[-1] != keys.shape[-1]:
        raise DimensionMismatchError(
            f"Dimension des requêtes {queries.shape[-1]} != dimension des clés {keys.shape[-1]}"
        )
    if keys.shape[-2] != values.shape[-2]:
        raise DimensionMismatchError(f"{keys.shape[-2]} clés pour {values.shape[-2]} valeurs")
    expected = (queries.shape[-2], keys.shape[-2])
    if tuple(mask.shape) != expected:
        raise DimensionMismatchError(f"Masque de forme {tuple(mask.shape)}, {expected} attendu")

    logits = queries @ keys.transpose(-2, -1) / math.sqrt(queries.shape[-1])
    logits = logits.masked_fill(~mask, MASK_FILL_VALUE)
    weights = torch.softmax(logits, dim=-1)
    output = weights @ values
    if return_weights:
        return output, weights
    return output


class MaskedSelfAttention(nn.Module):
    def __init__(self, hidden_dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = hidden_dim // n_heads
        self.qkv = nn.Linear(hidden_dim, 3 * hidden_dim)
        self.out_proj = nn.Linear(hidden_dim, hidden_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        length = x.shape[0]
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        # [T, D] -> [H, T, d]
        q, k, v = (t.view(length, self.n_heads, self.head_dim).transpose(0, 1) for t in (q, k, v))
        heads = masked_attention(q, k, v, mask)
        merged = heads.transpose(0, 1).reshape(length, -1)
        return self.out_proj(self.dropout(merged))


class EncoderLayer(nn.Module):
    """Couche post-norm : attention masquée puis feed-forward, avec résiduels"""

    def __init__(self, hidden_dim: int, n_heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.attention = MaskedSelfAttention(hidden_dim, n_heads, dropout)
        self.norm1 = nn.LayerNorm(hidden_dim)
        self.feed_forward = nn.Sequential(
            nn.Linear(hidden_dim, ff_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(ff_dim, hidden_dim),
        )
        self.norm2 = nn.LayerNorm(hidden_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attention(x, mask)))
        return self.norm2(x + self.dropout(self.feed_forward(x)))


@dataclass
class ModelOutputs:
    """Sorties du modèle pour un échantillon"""
    frame_scores: torch.Tensor
    sentence_scores: torch.Tensor
    replay_pred: torch.Tensor
    cls_video: torch.Tensor
    cls_text: torch.Tensor
    frame_tokens: torch.Tensor
    text_tokens: torch.Tensor
    mode: str

    def frame_scores_numpy(self) -> np.ndarray:
        return self.frame_scores.detach().cpu().double().numpy()

    def sentence_scores_numpy(self) -> np.ndarray:
        return self.sentence_scores.detach().cpu().double().numpy()

    def replay_numpy(self) -> np.ndarray:
        return self.replay_pred.detach().cpu().double().numpy()


class HierSumModel(nn.Module):
    """Réseau F commun aux étapes enfant (sous-titres) et parent (description globale)"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        hidden = config.hidden_dim
        self.projection = InputProjection(
            config.video_dim, config.text_dim, hidden, config.max_frames, config.max_sentences,
        )
        self.layers = nn.ModuleList([
            EncoderLayer(hidden, config.n_heads, config.feedforward_dim, config.dropout)
            for _ in range(config.n_layers)
        ])
        self.frame_head = nn.Linear(hidden, 1)
        self.sentence_head = nn.Linear(hidden, 1)
        self.replay_head = nn.Linear(hidden, 1)

    def encode(self, sequence: FusedSequence) -> torch.Tensor:
        mask = sequence.mask.as_tensor(device=sequence.tokens.device)
        hidden = sequence.tokens
        for layer in self.layers:
            hidden = layer(hidden, mask)
        return hidden

    def forward(
        self,
        sample: VideoSample,
        mode: str = MODE_CHILD,
        parent_text_source: str = 'global',
        allow_empty_text: bool = False,
    ) -> ModelOutputs:
        sequence = build_fused_sequence(
            sample,
            self.projection,
            mode,
            parent_text_source=parent_text_source,
            intra_modality=not self.config.cross_modal_only,
            allow_empty_text=allow_empty_text,
        )
        hidden = self.encode(sequence)
        frame_tokens = hidden[sequence.frame_slice]
        text_tokens = hidden[sequence.text_slice]
        return ModelOutputs(
            frame_scores=torch.sigmoid(self.frame_head(frame_tokens)).squeeze(-1),
            sentence_scores=torch.sigmoid(self.sentence_head(text_tokens)).squeeze(-1),
            replay_pred=torch.sigmoid(self.replay_head(frame_tokens)).squeeze(-1),
            cls_video=F.normalize(hidden[sequence.mask.cls_video_index], dim=-1),
            cls_text=F.normalize(hidden[sequence.mask.cls_text_index], dim=-1),
            frame_tokens=frame_tokens,
            text_tokens=text_tokens,
            mode=mode,
        )

    def head_parameters(self):
        return {
            'frame_head': self.frame_head,
            'sentence_head': self.sentence_head,
            'replay_head': self.replay_head,
        }


def _initialize(model: HierSumModel) -> None:
    # Loi normale tronquée (sigma=0.02) pour projections et plongements, biais à zéro
    for module in model.modules():
        if isinstance(module, nn.Linear):
            nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
    for token in (model.projection.cls_video, model.projection.cls_text):
        nn.init.trunc_normal_(token, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)


def init_params(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> HierSumModel:
    """Instancie le modèle de façon déterministe à partir de la graine"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = HierSumModel(config)
        _initialize(model)
    return model.to(dtype)


def forward(model: HierSumModel, sample: VideoSample, mode: str = MODE_CHILD, parent_text_source: str = 'global') -> ModelOutputs:
    return model(sample, mode=mode, parent_text_source=parent_text_source)


__all__ = [
    'HierSumModel',
    'ModelOutputs',
    'MODE_CHILD',
    'MODE_PARENT',
    'forward',
    'init_params',
    'masked_attention',
]
