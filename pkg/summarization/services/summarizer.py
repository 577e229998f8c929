"""
Sélection du résumé : sac à dos 0/1 sur les plans sous un budget de durée, ou
top-k des frames ; phrases clés par seuil (ou nombre fixe) sur les scores texte.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..exceptions import ConfigurationError, DimensionMismatchError
from .alignment import MODE_CHILD
from .dataset import VideoSample
from .segmentation import ShotBoundaries, frame_to_shot_scores, resolve_shots, shot_selection_to_frames

logger = logging.getLogger(__name__)

SUMMARY_KNAPSACK = 'knapsack'
SUMMARY_TOPK = 'topk'

DEFAULT_BUDGET_RATIO = 0.15
DEFAULT_TOPK_FRACTION = 0.55
DEFAULT_SENTENCE_THRESHOLD = 0.5

# Tolérance pour départager deux solutions de même valeur
TIE_TOLERANCE = 1e-12


@dataclass
class SummarySelection:
    selected_frames: np.ndarray
    selected_sentences: np.ndarray
    frame_scores: np.ndarray
    sentence_scores: np.ndarray
    mode: str
    budget_ratio: Optional[float] = None
    fraction: Optional[float] = None
    shots: Optional[ShotBoundaries] = None
    shot_scores: Optional[np.ndarray] = None
    selected_shots: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return int(self.selected_frames.size)

    def frame_indices(self):
        return np.flatnonzero(self.selected_frames).tolist()

    def sentence_indices(self):
        return np.flatnonzero(self.selected_sentences).tolist()


def knapsack_select(shot_scores, shot_lengths, budget: int) -> np.ndarray:
    """
    Sac à dos 0/1 exact : maximise sum(score * x) sous sum(longueur * x) <= budget.
    À valeur égale, les plans les plus précoces sont retenus.
    """
    scores = np.asarray(shot_scores, dtype=np.float64).reshape(-1)
    lengths = np.asarray(shot_lengths).reshape(-1)
    if scores.size != lengths.size:
        raise DimensionMismatchError(f"knapsack_select: {scores.size} scores pour {lengths.size} longueurs")
    if np.any(lengths < 0):
        raise ConfigurationError("knapsack_select: longueurs négatives")
    if budget < 0:
        raise ConfigurationError("knapsack_select: budget négatif")
    lengths = lengths.astype(np.int64)
    budget = int(budget)
    n = scores.size

    # best[i, c] : meilleure valeur avec les plans i..n-1 et une capacité c
    best = np.zeros((n + 1, budget + 1))
    capacities = np.arange(budget + 1)
    for i in range(n - 1, -1, -1):
        best[i] = best[i + 1]
        fits = capacities >= lengths[i]
        take = scores[i] + best[i + 1, capacities[fits] - lengths[i]]
        best[i, fits] = np.maximum(best[i, fits], take)

    selected = np.zeros(n, dtype=np.int64)
    capacity = budget
    for i in range(n):
        if lengths[i] > capacity:
            continue
        take = scores[i] + best[i + 1, capacity - lengths[i]]
        if take >= best[i + 1, capacity] - TIE_TOLERANCE:
            selected[i] = 1
            capacity -= lengths[i]
    return selected


def select_top(scores, k: int) -> np.ndarray:
    """Les k meilleurs scores, égalités vers l'indice le plus petit"""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    k = int(max(0, min(k, scores.size)))
    order = np.lexsort((np.arange(scores.size), -scores))
    selected = np.zeros(scores.size, dtype=np.int64)
    selected[order[:k]] = 1
    return selected


def topk_count(n_frames: int, fraction: float) -> int:
    return int(math.floor(fraction * n_frames + 1e-9))


def topk_select(frame_scores, fraction: float) -> np.ndarray:
    """Exactement floor(fraction * N) frames de plus haut score"""
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction hors de ]0, 1]: {fraction}")
    scores = np.asarray(frame_scores, dtype=np.float64).reshape(-1)
    return select_top(scores, topk_count(scores.size, fraction))


def select_sentences(sentence_scores, threshold: float = DEFAULT_SENTENCE_THRESHOLD, count: Optional[int] = None) -> np.ndarray:
    scores = np.asarray(sentence_scores, dtype=np.float64).reshape(-1)
    if count is not None:
        return select_top(scores, count)
    return (scores >= threshold).astype(np.int64)


def summarize_scores(
    frame_scores,
    sentence_scores,
    mode: str = SUMMARY_KNAPSACK,
    budget_ratio: float = DEFAULT_BUDGET_RATIO,
    fraction: Optional[float] = DEFAULT_TOPK_FRACTION,
    shots: Optional[ShotBoundaries] = None,
    sentence_threshold: float = DEFAULT_SENTENCE_THRESHOLD,
    sentence_count: Optional[int] = None,
    topk: Optional[int] = None,
) -> SummarySelection:
    """
    Sélection à partir de scores déjà calculés. En mode top-k, `topk` impose
    un nombre de frames et prime sur `fraction`.
    """
    frame_scores = np.asarray(frame_scores, dtype=np.float64).reshape(-1)
    sentence_scores = np.asarray(sentence_scores, dtype=np.float64).reshape(-1)
    n_frames = frame_scores.size
    selected_sentences = select_sentences(sentence_scores, sentence_threshold, sentence_count)

    if mode == SUMMARY_TOPK:
        if topk is not None:
            selected = select_top(frame_scores, topk)
        else:
            selected = topk_select(frame_scores, fraction if fraction is not None else DEFAULT_TOPK_FRACTION)
        return SummarySelection(
            selected_frames=selected,
            selected_sentences=selected_sentences,
            frame_scores=frame_scores,
            sentence_scores=sentence_scores,
            mode=mode,
            fraction=fraction,
            shots=shots,
            shot_scores=frame_to_shot_scores(frame_scores, shots) if shots is not None else None,
        )

    if mode != SUMMARY_KNAPSACK:
        raise ConfigurationError(f"Mode de résumé inconnu '{mode}' (knapsack ou topk)")
    if not 0.0 < budget_ratio <= 1.0:
        raise ConfigurationError(f"budget_ratio hors de ]0, 1]: {budget_ratio}")
    shots = shots or ShotBoundaries.single(n_frames)
    shot_scores = frame_to_shot_scores(frame_scores, shots)
    budget = int(math.floor(budget_ratio * n_frames + 1e-9))
    selected_shots = knapsack_select(shot_scores, shots.lengths(), budget)
    return SummarySelection(
        selected_frames=shot_selection_to_frames(selected_shots, shots),
        selected_sentences=selected_sentences,
        frame_scores=frame_scores,
        sentence_scores=sentence_scores,
        mode=mode,
        budget_ratio=budget_ratio,
        shots=shots,
        shot_scores=shot_scores,
        selected_shots=selected_shots,
    )


def predict_outputs(model, sample: VideoSample):
    """
    Passe avant en mode enfant (sous-titres comme texte), sans dropout.
    Une vidéo sans sous-titre est notée sur ses seules frames (aucun score de phrase).
    """
    model.eval()
    if sample.n_sentences == 0:
        logger.warning("[Summarizer] '%s' sans sous-titre : scores calculés sans jeton de phrase", sample.video_id)
    with torch.no_grad():
        return model(sample, mode=MODE_CHILD, allow_empty_text=True)


def predict_scores(model, sample: VideoSample):
    outputs = predict_outputs(model, sample)
    return outputs.frame_scores_numpy(), outputs.sentence_scores_numpy()


def summarize_video(
    model,
    sample: VideoSample,
    mode: str = SUMMARY_KNAPSACK,
    budget_ratio: float = DEFAULT_BUDGET_RATIO,
    fraction: Optional[float] = DEFAULT_TOPK_FRACTION,
    sentence_threshold: float = DEFAULT_SENTENCE_THRESHOLD,
    sentence_count: Optional[int] = None,
    kts_max_change_points: Optional[int] = None,
    kts_penalty: float = 1.0,
    shots: Optional[ShotBoundaries] = None,
) -> SummarySelection:
    frame_scores, sentence_scores = predict_scores(model, sample)
    if shots is None and mode == SUMMARY_KNAPSACK:
        shots = resolve_shots(sample, kts_max_change_points, kts_penalty)
    selection = summarize_scores(
        frame_scores,
        sentence_scores,
        mode=mode,
        budget_ratio=budget_ratio,
        fraction=fraction,
        shots=shots,
        sentence_threshold=sentence_threshold,
        sentence_count=sentence_count,
    )
    logger.info(
        "[Summarizer] '%s' : %d/%d frames, %d/%d phrases (%s)",
        sample.video_id,
        int(selection.selected_frames.sum()),
        sample.n_frames,
        int(selection.selected_sentences.sum()),
        sample.n_sentences,
        mode,
    )
    return selection


# ---------------------------------------------------------------------------
# Sorties
# ---------------------------------------------------------------------------

def summary_to_dict(sample: VideoSample, selection: SummarySelection) -> dict:
    document = {
        'video_id': sample.video_id,
        'mode': selection.mode,
        'n_frames': selection.n_frames,
        'budget_ratio': selection.budget_ratio,
        'fraction': selection.fraction,
        'selected_frames': selection.frame_indices(),
        'selected_sentences': selection.sentence_indices(),
        'sentences': [
            sample.subtitles[j].text for j in selection.sentence_indices()
            if sample.subtitles[j].text is not None
        ],
        'frame_scores': [round(float(s), 6) for s in selection.frame_scores],
        'sentence_scores': [round(float(s), 6) for s in selection.sentence_scores],
    }
    if selection.shots is not None:
        shot_table = []
        for index, (start, end) in enumerate(selection.shots.segments()):
            row = {'shot': index, 'start': start, 'end': end}
            if selection.shot_scores is not None:
                row['score'] = round(float(selection.shot_scores[index]), 6)
            if selection.selected_shots is not None:
                row['selected'] = bool(selection.selected_shots[index])
            shot_table.append(row)
        document['shots'] = shot_table
    return document


def write_summary_json(path, sample: VideoSample, selection: SummarySelection) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary_to_dict(sample, selection), indent=2, ensure_ascii=False), encoding='utf-8')
    return path


def write_scores_csv(path, selection: SummarySelection) -> Path:
    """Une ligne par frame : indice, score, sélection, plan"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    owners = selection.shots.shot_of_frame() if selection.shots is not None else None
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['frame', 'score', 'selected', 'shot'])
        for index, score in enumerate(selection.frame_scores):
            writer.writerow([
                index,
                f"{float(score):.6f}",
                int(selection.selected_frames[index]),
                int(owners[index]) if owners is not None else '',
            ])
    return path
