"""
Séquence d'entrée multimodale X et masque d'attention guidé par l'alignement.

Ordre des jetons : [CLSV], N frames, [CLST], M jetons texte.
L'attention intra-modalité est libre ; l'attention frame <-> sous-titre n'est
permise que si le sous-titre couvre la frame ; les [CLS] voient tout.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from ..exceptions import ConfigurationError, MissingGlobalFeatureError, SampleInvariantError
from .dataset import VideoSample, validate_subtitle_spans

MODE_CHILD = 'child'
MODE_PARENT = 'parent'
MODES = (MODE_CHILD, MODE_PARENT)

MODALITY_VIDEO = 0
MODALITY_TEXT = 1


def _span(segment):
    if hasattr(segment, 'start_frame'):
        return int(segment.start_frame), int(segment.end_frame)
    start, end = segment
    return int(start), int(end)


@dataclass
class AlignmentMask:
    """Masque binaire [(2+N+M) x (2+N+M)] ; True = attention permise"""
    mask: np.ndarray
    n_frames: int
    n_sentences: int

    @property
    def size(self) -> int:
        return self.mask.shape[0]

    @property
    def cls_video_index(self) -> int:
        return 0

    @property
    def cls_text_index(self) -> int:
        return self.n_frames + 1

    def frame_index(self, i: int) -> int:
        return 1 + i

    def sentence_index(self, j: int) -> int:
        return self.n_frames + 2 + j

    def as_tensor(self, device=None) -> torch.Tensor:
        return torch.as_tensor(self.mask, dtype=torch.bool, device=device)


def build_alignment_mask(
    n_frames: int,
    n_sentences: int,
    subtitles: Sequence,
    intra_modality: bool = True,
) -> AlignmentMask:
    """
    Construit le masque d'alignement. `subtitles` contient des SubtitleSegment
    ou des couples (start, end). Avec intra_modality=False (sonde), seules la
    diagonale, les [CLS] et les paires frame/sous-titre alignées restent ouvertes.
    """
    if n_frames < 1:
        raise SampleInvariantError("N doit être >= 1")
    spans = [_span(s) for s in subtitles]
    if len(spans) != n_sentences:
        raise SampleInvariantError(f"{len(spans)} segments fournis pour M={n_sentences}")
    validate_subtitle_spans(spans, n_frames, context='alignment')

    size = n_frames + n_sentences + 2
    video = slice(0, n_frames + 1)
    text = slice(n_frames + 1, size)

    mask = np.zeros((size, size), dtype=bool)
    if intra_modality:
        mask[video, video] = True
        mask[text, text] = True

    frames = np.arange(n_frames)
    for j, (start, end) in enumerate(spans):
        covered = (frames >= start) & (frames < end)
        column = n_frames + 2 + j
        mask[1 + frames[covered], column] = True
        mask[column, 1 + frames[covered]] = True

    mask[0, :] = mask[:, 0] = True
    mask[n_frames + 1, :] = mask[:, n_frames + 1] = True
    np.fill_diagonal(mask, True)
    return AlignmentMask(mask=mask, n_frames=n_frames, n_sentences=n_sentences)


@dataclass
class FusedSequence:
    """Séquence projetée X, tags de modalité, identifiants de segment et masque"""
    tokens: torch.Tensor
    modality: np.ndarray
    segment_ids: np.ndarray
    mask: AlignmentMask

    @property
    def n_frames(self) -> int:
        return self.mask.n_frames

    @property
    def n_text(self) -> int:
        return self.mask.n_sentences

    @property
    def frame_slice(self) -> slice:
        return slice(1, self.n_frames + 1)

    @property
    def text_slice(self) -> slice:
        return slice(self.n_frames + 2, self.n_frames + 2 + self.n_text)


class InputProjection(nn.Module):
    """
    Projection linéaire par modalité vers D, jetons [CLS] appris et plongements
    de position (ordre dans la modalité), de segment et de modalité.
    """

    def __init__(self, video_dim: int, text_dim: int, hidden_dim: int, max_frames: int, max_sentences: int):
        super().__init__()
        self.max_frames = max_frames
        self.max_sentences = max_sentences
        self.video_proj = nn.Linear(video_dim, hidden_dim)
        self.text_proj = nn.Linear(text_dim, hidden_dim)
        self.cls_video = nn.Parameter(torch.zeros(hidden_dim))
        self.cls_text = nn.Parameter(torch.zeros(hidden_dim))
        # Position 0 réservée au [CLS] de la modalité
        self.video_position = nn.Embedding(max_frames + 1, hidden_dim)
        self.text_position = nn.Embedding(max_sentences + 1, hidden_dim)
        # Segment 0 : [CLS] et frames non couvertes
        self.segment = nn.Embedding(max_sentences + 1, hidden_dim)
        self.modality = nn.Embedding(2, hidden_dim)

    def embeddings(self, modality: np.ndarray, positions: np.ndarray, segment_ids: np.ndarray) -> torch.Tensor:
        """Somme position + segment + modalité pour chaque jeton"""
        device = self.cls_video.device
        modality_t = torch.as_tensor(modality, dtype=torch.long, device=device)
        positions_t = torch.as_tensor(positions, dtype=torch.long, device=device)
        segments_t = torch.as_tensor(segment_ids, dtype=torch.long, device=device)
        is_video = (modality_t == MODALITY_VIDEO).unsqueeze(-1)
        position = torch.where(
            is_video,
            self.video_position(positions_t.clamp(max=self.max_frames)),
            self.text_position(positions_t.clamp(max=self.max_sentences)),
        )
        return position + self.segment(segments_t) + self.modality(modality_t)


def parent_text_feature(sample: VideoSample, source: str = 'global') -> Optional[np.ndarray]:
    """
    Texte de l'étape parent : description globale, ou, avec source='key_sentences'
    et sans description, moyenne des features des sous-titres positifs.
    """
    if sample.global_feature is not None:
        return np.asarray(sample.global_feature, dtype=np.float32)
    if source == 'key_sentences' and sample.sentence_labels is not None and sample.subtitles:
        positives = np.flatnonzero(np.asarray(sample.sentence_labels) == 1)
        if positives.size:
            return sample.subtitle_features()[positives].mean(axis=0)
    return None


def _layout(n_frames: int, spans: Sequence[tuple]):
    n_text = len(spans)
    modality = np.concatenate([
        np.full(n_frames + 1, MODALITY_VIDEO),
        np.full(n_text + 1, MODALITY_TEXT),
    ])
    positions = np.concatenate([np.arange(n_frames + 1), np.arange(n_text + 1)])

    frame_segments = np.zeros(n_frames, dtype=np.int64)
    # Segment d'une frame : premier sous-titre qui la couvre
    for j in reversed(range(n_text)):
        start, end = spans[j]
        frame_segments[start:end] = j + 1
    segment_ids = np.concatenate([
        [0], frame_segments, [0], np.arange(1, n_text + 1),
    ]).astype(np.int64)
    return modality, positions, segment_ids


def build_fused_sequence(
    sample: VideoSample,
    projection: InputProjection,
    mode: str,
    parent_text_source: str = 'global',
    intra_modality: bool = True,
    allow_empty_text: bool = False,
) -> FusedSequence:
    """
    Construit X pour un échantillon. En mode enfant, les jetons texte sont les M
    sous-titres ; en mode parent, un unique jeton (description globale) couvrant [0, N).
    Avec allow_empty_text, une vidéo sans sous-titre donne une séquence sans
    jeton de phrase ([CLS_V], frames, [CLS_T]).
    """
    if mode not in MODES:
        raise ConfigurationError(f"Mode inconnu '{mode}' (child ou parent)")
    n_frames = sample.n_frames
    if n_frames > projection.max_frames:
        raise ConfigurationError(
            f"'{sample.video_id}': N={n_frames} dépasse max_frames={projection.max_frames}"
        )

    if mode == MODE_CHILD:
        if sample.n_sentences == 0 and not allow_empty_text:
            raise SampleInvariantError(f"'{sample.video_id}': le mode enfant exige au moins un sous-titre")
        if sample.n_sentences > projection.max_sentences:
            raise ConfigurationError(
                f"'{sample.video_id}': M={sample.n_sentences} dépasse max_sentences={projection.max_sentences}"
            )
        text_features = sample.subtitle_features(projection.text_proj.in_features)
        spans = sample.subtitle_spans()
    else:
        feature = parent_text_feature(sample, parent_text_source)
        if feature is None:
            raise MissingGlobalFeatureError(f"'{sample.video_id}': aucune description globale pour l'étape parent")
        text_features = feature.reshape(1, -1)
        spans = [(0, n_frames)]

    mask = build_alignment_mask(n_frames, len(spans), spans, intra_modality=intra_modality)
    modality, positions, segment_ids = _layout(n_frames, spans)

    weight = projection.video_proj.weight
    frames_t = torch.as_tensor(sample.frame_features, dtype=weight.dtype, device=weight.device)
    text_t = torch.as_tensor(text_features, dtype=weight.dtype, device=weight.device)

    content = torch.cat([
        projection.cls_video.unsqueeze(0),
        projection.video_proj(frames_t),
        projection.cls_text.unsqueeze(0),
        projection.text_proj(text_t),
    ], dim=0)
    tokens = content + projection.embeddings(modality, positions, segment_ids)
    return FusedSequence(tokens=tokens, modality=modality, segment_ids=segment_ids, mask=mask)
