"""
Pertes d'entraînement : focal (classification frames / phrases), MSE sur les
scores de relecture, contrastif inter-échantillons sur les [CLS], contrastif
intra-échantillon avec négatifs difficiles, et somme pondérée.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F

from ..exceptions import ConfigurationError, DimensionMismatchError
from .alignment import MODE_CHILD, MODE_PARENT
from .pydantic_models import LossWeights

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-7
NORM_TOLERANCE = 1e-4

PARENT_LOSS_FULL = 'full'
PARENT_LOSS_VIDEO_ONLY = 'video_only'


def _as_tensor(values, like: Optional[torch.Tensor] = None) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values if like is None else values.to(like.dtype)
    dtype = like.dtype if like is not None else torch.float64
    device = like.device if like is not None else None
    return torch.as_tensor(np.asarray(values), dtype=dtype, device=device)


def _check_lengths(a: torch.Tensor, b: torch.Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{name}: formes {tuple(a.shape)} et {tuple(b.shape)} différentes")


def focal_loss(p, y, focal_alpha: float = 0.25, focal_gamma: float = 2.0) -> torch.Tensor:
    """
    Moyenne de -a*y*(1-p)^g*ln(p) - (1-a)*(1-y)*p^g*ln(1-p) ; p est borné
    à [1e-7, 1 - 1e-7] avant le logarithme. Entrée vide -> 0.
    """
    p = _as_tensor(p)
    y = _as_tensor(y, like=p)
    _check_lengths(p, y, 'focal_loss')
    if p.numel() == 0:
        return p.sum() * 0.0
    p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    positive = -focal_alpha * y * (1.0 - p) ** focal_gamma * torch.log(p)
    negative = -(1.0 - focal_alpha) * (1.0 - y) * p ** focal_gamma * torch.log(1.0 - p)
    return (positive + negative).mean()


def mse_replay_loss(pred, scores) -> torch.Tensor:
    pred = _as_tensor(pred)
    scores = _as_tensor(scores, like=pred)
    _check_lengths(pred, scores, 'mse_replay_loss')
    if pred.numel() == 0:
        return pred.sum() * 0.0
    return ((pred - scores) ** 2).mean()


def _normalized_rows(embeddings: torch.Tensor, name: str) -> torch.Tensor:
    norms = embeddings.detach().norm(dim=-1)
    if not torch.allclose(norms, torch.ones_like(norms), atol=NORM_TOLERANCE):
        logger.warning("[Losses] %s : lignes non normalisées, renormalisation", name)
    return F.normalize(embeddings, dim=-1)


def inter_contrastive(cls_video, cls_text, temperature: float = 0.07) -> torch.Tensor:
    """
    Entropie croisée symétrique sur la matrice B x B des similarités cosinus
    divisées par la température ; les paires (i, i) sont les positifs.
    """
    cls_video = _as_tensor(cls_video)
    cls_text = _as_tensor(cls_text, like=cls_video)
    if cls_video.dim() != 2 or cls_video.shape != cls_text.shape:
        raise DimensionMismatchError(
            f"inter_contrastive: formes {tuple(cls_video.shape)} et {tuple(cls_text.shape)}, [B x D] attendu"
        )
    if cls_video.shape[0] < 1:
        raise DimensionMismatchError("inter_contrastive: B doit être >= 1")
    video = _normalized_rows(cls_video, 'cls_video')
    text = _normalized_rows(cls_text, 'cls_text')
    logits = video @ text.T / temperature
    targets = torch.arange(logits.shape[0], device=logits.device)
    video_to_text = F.cross_entropy(logits, targets)
    text_to_video = F.cross_entropy(logits.T, targets)
    return (video_to_text + text_to_video) / 2.0


# ---------------------------------------------------------------------------
# Contrastif intra-échantillon
# ---------------------------------------------------------------------------

@dataclass
class ModalitySets:
    """Positifs et négatifs difficiles d'une modalité"""
    positives: np.ndarray
    hard_negatives: np.ndarray


@dataclass
class ContrastiveSampleSets:
    positive_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    positive_sentences: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    hard_negative_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    hard_negative_sentences: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        for name in ('positive_frames', 'positive_sentences', 'hard_negative_frames', 'hard_negative_sentences'):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        if np.intersect1d(self.positive_frames, self.hard_negative_frames).size:
            raise ValueError("Positifs et négatifs difficiles (frames) non disjoints")
        if np.intersect1d(self.positive_sentences, self.hard_negative_sentences).size:
            raise ValueError("Positifs et négatifs difficiles (phrases) non disjoints")

    @classmethod
    def from_modalities(cls, frames: ModalitySets, sentences: ModalitySets) -> 'ContrastiveSampleSets':
        return cls(
            positive_frames=frames.positives,
            positive_sentences=sentences.positives,
            hard_negative_frames=frames.hard_negatives,
            hard_negative_sentences=sentences.hard_negatives,
        )


def mine_hard_negatives(scores, labels, exclusion_window: int = 2, top_k: Optional[int] = None) -> ModalitySets:
    """
    Négatifs difficiles : éléments d'étiquette 0 à une distance > exclusion_window
    de tout positif, les top_k mieux notés (égalités vers l'indice le plus petit).
    top_k vaut par défaut le nombre de positifs.
    """
    if isinstance(scores, torch.Tensor):
        scores = scores.detach().cpu().numpy()
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionMismatchError(f"mine_hard_negatives: {scores.size} scores pour {labels.size} étiquettes")
    if exclusion_window < 0:
        raise ConfigurationError("exclusion_window doit être >= 0")

    positives = np.flatnonzero(labels == 1)
    if top_k is None:
        top_k = positives.size

    indices = np.arange(scores.size)
    candidates = labels == 0
    if positives.size:
        distance = np.abs(indices[:, None] - positives[None, :]).min(axis=1)
        candidates &= distance > exclusion_window
    candidate_idx = indices[candidates]

    order = np.lexsort((candidate_idx, -scores[candidate_idx]))
    hard = np.sort(candidate_idx[order][:max(top_k, 0)])
    return ModalitySets(positives=positives.astype(np.int64), hard_negatives=hard.astype(np.int64))


def build_contrastive_sets(
    frame_scores,
    frame_labels,
    sentence_scores,
    sentence_labels,
    exclusion_window: int = 2,
    top_k: Optional[int] = None,
    sentence_exclusion_window: int = 0,
) -> ContrastiveSampleSets:
    """Ensembles I_PF, I_PS, I_HNF, I_HNS d'un échantillon"""
    frames = mine_hard_negatives(frame_scores, frame_labels, exclusion_window, top_k)
    sentences = mine_hard_negatives(sentence_scores, sentence_labels, sentence_exclusion_window, top_k)
    return ContrastiveSampleSets.from_modalities(frames, sentences)


def info_nce(anchors: torch.Tensor, positive: torch.Tensor, negatives: torch.Tensor, temperature: float) -> torch.Tensor:
    """
    -ln(exp(s+/t) / (exp(s+/t) + sum exp(s-/t))) moyen sur les ancres,
    s = similarité cosinus. Un positif partagé par toutes les ancres.
    """
    anchors = F.normalize(anchors, dim=-1)
    positive = F.normalize(positive, dim=-1)
    negatives = F.normalize(negatives, dim=-1)
    positive_logits = (anchors @ positive).unsqueeze(-1) / temperature
    negative_logits = anchors @ negatives.T / temperature
    logits = torch.cat([positive_logits, negative_logits], dim=-1)
    return -torch.log_softmax(logits, dim=-1)[:, 0].mean()


def _check_indices(indices: np.ndarray, size: int, name: str) -> None:
    if indices.size and (indices.min() < 0 or indices.max() >= size):
        raise IndexError(f"intra_contrastive: indice de {name} hors de [0, {size})")


def intra_contrastive(frame_tokens, text_tokens, sets: ContrastiveSampleSets, temperature: float = 0.07) -> torch.Tensor:
    """
    Deux termes : ancres = frames positives, positif = moyenne des phrases
    positives, négatifs = frames difficiles ; puis symétriquement côté texte.
    Un terme dont un ensemble est vide vaut 0.
    """
    frame_tokens = _as_tensor(frame_tokens)
    text_tokens = _as_tensor(text_tokens, like=frame_tokens)
    _check_indices(sets.positive_frames, frame_tokens.shape[0], 'frame positive')
    _check_indices(sets.hard_negative_frames, frame_tokens.shape[0], 'frame négative')
    _check_indices(sets.positive_sentences, text_tokens.shape[0], 'phrase positive')
    _check_indices(sets.hard_negative_sentences, text_tokens.shape[0], 'phrase négative')

    total = frame_tokens.sum() * 0.0 + text_tokens.sum() * 0.0
    pf = torch.as_tensor(sets.positive_frames, device=frame_tokens.device)
    ps = torch.as_tensor(sets.positive_sentences, device=frame_tokens.device)
    hnf = torch.as_tensor(sets.hard_negative_frames, device=frame_tokens.device)
    hns = torch.as_tensor(sets.hard_negative_sentences, device=frame_tokens.device)

    if pf.numel() and ps.numel() and hnf.numel():
        total = total + info_nce(frame_tokens[pf], text_tokens[ps].mean(dim=0), frame_tokens[hnf], temperature)
    if ps.numel() and pf.numel() and hns.numel():
        total = total + info_nce(text_tokens[ps], frame_tokens[pf].mean(dim=0), text_tokens[hns], temperature)
    return total


# ---------------------------------------------------------------------------
# Perte totale
# ---------------------------------------------------------------------------

@dataclass
class LossParts:
    cls_video: torch.Tensor
    cls_text: Optional[torch.Tensor] = None
    mse: Optional[torch.Tensor] = None
    inter: Optional[torch.Tensor] = None
    intra: Optional[torch.Tensor] = None


def _check_weights(weights: LossWeights) -> None:
    for name in ('alpha_mse', 'beta', 'lambda_intra'):
        if getattr(weights, name) < 0:
            raise ConfigurationError(f"Poids {name} négatif: {getattr(weights, name)}")


def total_loss(
    parts: LossParts,
    weights: LossWeights,
    mode: str = MODE_CHILD,
    parent_loss: str = PARENT_LOSS_FULL,
):
    """
    Enfant : cls_video + cls_text + a*mse + b*inter + l*intra.
    Parent : cls_video + a*mse + b*inter, ou cls_video seul en 'video_only'.
    Un terme absent (None) est ignoré. Retourne (perte, détail par terme).
    """
    _check_weights(weights)
    if mode not in (MODE_CHILD, MODE_PARENT):
        raise ConfigurationError(f"Mode inconnu '{mode}'")

    terms = {'cls_video': (1.0, parts.cls_video)}
    if mode == MODE_CHILD:
        terms['cls_text'] = (1.0, parts.cls_text)
        terms['mse'] = (weights.alpha_mse, parts.mse)
        terms['inter'] = (weights.beta, parts.inter)
        terms['intra'] = (weights.lambda_intra, parts.intra)
    elif parent_loss == PARENT_LOSS_FULL:
        terms['mse'] = (weights.alpha_mse, parts.mse)
        terms['inter'] = (weights.beta, parts.inter)

    total = None
    breakdown: Dict[str, float] = {}
    for name, (weight, value) in terms.items():
        if value is None:
            continue
        value = _as_tensor(value)
        breakdown[name] = float(value.detach())
        contribution = weight * value
        total = contribution if total is None else total + contribution
    breakdown['total'] = float(total.detach())
    return total, breakdown
