"""
Segmentation temporelle par noyau (KTS) : ruptures minimisant la dispersion
intra-segment calculée sur la matrice de Gram (noyau produit scalaire), nombre
de segments choisi par un objectif pénalisé. Agrégation des scores par plan.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import SampleInvariantError
from .dataset import validate_shot_starts

logger = logging.getLogger(__name__)

# Dispersion totale relative en dessous de laquelle la séquence est constante
CONSTANT_TOLERANCE = 1e-10


@dataclass
class ShotBoundaries:
    """Débuts de plans triés (le premier vaut 0) ; plan k = [c_k, c_{k+1})"""
    change_points: List[int]
    n_frames: int

    def __post_init__(self):
        self.change_points = [int(c) for c in self.change_points]
        validate_shot_starts(self.change_points, self.n_frames, context='shots')

    @classmethod
    def single(cls, n_frames: int) -> 'ShotBoundaries':
        return cls([0], n_frames)

    @property
    def n_shots(self) -> int:
        return len(self.change_points)

    def segments(self) -> List[Tuple[int, int]]:
        ends = self.change_points[1:] + [self.n_frames]
        return list(zip(self.change_points, ends))

    def lengths(self) -> np.ndarray:
        return np.array([end - start for start, end in self.segments()], dtype=np.int64)

    def shot_of_frame(self) -> np.ndarray:
        """Indice de plan de chaque frame"""
        owner = np.zeros(self.n_frames, dtype=np.int64)
        for index, (start, end) in enumerate(self.segments()):
            owner[start:end] = index
        return owner

    def to_dict(self) -> dict:
        return {'change_points': list(self.change_points), 'n_frames': self.n_frames}


def segment_scatters(gram: np.ndarray) -> np.ndarray:
    """
    scatters[i, j] = dispersion du segment [i, j] (bornes incluses) :
    somme des K_tt moins la somme du bloc K divisée par la longueur.
    """
    n = gram.shape[0]
    diagonal = np.concatenate([[0.0], np.cumsum(np.diag(gram))])
    block = np.zeros((n + 1, n + 1))
    block[1:, 1:] = np.cumsum(np.cumsum(gram, axis=0), axis=1)

    i = np.arange(n).reshape(-1, 1)
    j = np.arange(n).reshape(1, -1)
    lengths = np.maximum(j - i + 1, 1).astype(np.float64)
    block_sum = block[j + 1, j + 1] - block[i, j + 1] - block[j + 1, i] + block[i, i]
    scatters = diagonal[j + 1] - diagonal[i] - block_sum / lengths
    scatters[j < i] = 0.0
    return scatters


def _dynamic_program(scatters: np.ndarray, max_change_points: int):
    """
    objective[k] = dispersion minimale avec exactement k ruptures ;
    previous[k, l] = meilleur début du dernier segment des l premières frames.
    """
    n = scatters.shape[0]
    cost = np.full((max_change_points + 1, n + 1), np.inf)
    previous = np.zeros((max_change_points + 1, n + 1), dtype=np.int64)
    cost[0, 1:] = scatters[0, :]
    for k in range(1, max_change_points + 1):
        for end in range(k + 1, n + 1):
            starts = np.arange(k, end)
            candidates = cost[k - 1, starts] + scatters[starts, end - 1]
            best = int(np.argmin(candidates))
            cost[k, end] = candidates[best]
            previous[k, end] = starts[best]
    return cost[:, n], previous


def _backtrack(previous: np.ndarray, n_change_points: int, n_frames: int) -> List[int]:
    starts = []
    end = n_frames
    for k in range(n_change_points, 0, -1):
        end = int(previous[k, end])
        starts.append(end)
    return [0] + sorted(starts)


def _gram(features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise SampleInvariantError("kts_segment: features [N x D] avec N >= 1 attendues")
    return features @ features.T


def kts_fixed(features, n_change_points: int) -> Tuple[ShotBoundaries, float]:
    """Meilleure segmentation avec exactement n_change_points ruptures et sa dispersion"""
    gram = _gram(features)
    n = gram.shape[0]
    if not 0 <= n_change_points < n:
        raise SampleInvariantError(f"kts_fixed: {n_change_points} ruptures impossibles pour N={n}")
    objective, previous = _dynamic_program(segment_scatters(gram), n_change_points)
    starts = _backtrack(previous, n_change_points, n)
    return ShotBoundaries(starts, n), float(objective[n_change_points])


def kts_segment(features, max_change_points: Optional[int] = None, penalty: float = 1.0) -> ShotBoundaries:
    """
    Choisit m dans [0, max_change_points] minimisant
    dispersion_m / N + penalty * v * m / (2N) * (ln(N / m) + 1),
    v = dispersion totale / N (invariance à l'échelle des features).
    """
    gram = _gram(features)
    n = gram.shape[0]
    if max_change_points is None:
        max_change_points = n // 5
    max_change_points = int(min(max_change_points, n - 1))
    if max_change_points < 0:
        raise SampleInvariantError("max_change_points doit être >= 0")

    scatters = segment_scatters(gram)
    total = scatters[0, n - 1]
    if max_change_points == 0 or total <= CONSTANT_TOLERANCE * max(1.0, float(np.trace(gram))):
        return ShotBoundaries.single(n)

    objective, previous = _dynamic_program(scatters, max_change_points)
    variance = total / n
    counts = np.arange(1, max_change_points + 1, dtype=np.float64)
    penalties = np.zeros(max_change_points + 1)
    penalties[1:] = penalty * variance * counts / (2.0 * n) * (np.log(n / counts) + 1.0)
    costs = objective / n + penalties
    best = int(np.argmin(costs))

    shots = ShotBoundaries(_backtrack(previous, best, n), n)
    logger.debug("[KTS] N=%d : %d ruptures retenues (max %d)", n, best, max_change_points)
    return shots


def resolve_shots(sample, max_change_points: Optional[int] = None, penalty: float = 1.0) -> ShotBoundaries:
    """Plans fournis par le dataset si présents, sinon KTS sur les features image"""
    if sample.shots is not None:
        return ShotBoundaries(list(sample.shots), sample.n_frames)
    return kts_segment(sample.frame_features, max_change_points, penalty)


def frame_to_shot_scores(frame_scores, shots: ShotBoundaries) -> np.ndarray:
    """Moyenne des scores de frames dans chaque plan"""
    scores = np.asarray(frame_scores, dtype=np.float64).reshape(-1)
    if scores.size != shots.n_frames:
        raise SampleInvariantError(
            f"frame_to_shot_scores: {scores.size} scores pour des plans sur {shots.n_frames} frames"
        )
    return np.array([scores[start:end].mean() for start, end in shots.segments()])


def shot_selection_to_frames(selected_shots: Sequence[int], shots: ShotBoundaries) -> np.ndarray:
    frames = np.zeros(shots.n_frames, dtype=np.int64)
    for chosen, (start, end) in zip(selected_shots, shots.segments()):
        if chosen:
            frames[start:end] = 1
    return frames
