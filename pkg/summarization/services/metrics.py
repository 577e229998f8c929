"""
Mesures d'évaluation : F1 (multi-annotateurs), tau de Kendall (tau-b), rho de
Spearman, MAP@rho au niveau des plans, ROUGE-1/2/L, similarité cosinus image,
et rapport agrégé par split.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from rouge_score import rouge_scorer, tokenizers
from scipy import stats
from unidecode import unidecode

from ..exceptions import DimensionMismatchError, SampleInvariantError
from .dataset import DEFAULT_REPLAY_THRESHOLD, VideoSample, ground_truth_scores, ground_truth_summaries
from .pydantic_models import EvalProtocol
from .segmentation import frame_to_shot_scores, resolve_shots
from .summarizer import SUMMARY_TOPK, predict_outputs, summarize_scores

logger = logging.getLogger(__name__)

F1_MEAN = 'mean'
F1_MAX = 'max'


# ---------------------------------------------------------------------------
# F1
# ---------------------------------------------------------------------------

def _f1_single(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"f1_summary: longueurs {pred.size} et {gt.size} différentes")
    pred_pos = pred == 1
    gt_pos = gt == 1
    if not pred_pos.any() and not gt_pos.any():
        return 1.0
    tp = int(np.sum(pred_pos & gt_pos))
    if tp == 0:
        return 0.0
    precision = tp / int(pred_pos.sum())
    recall = tp / int(gt_pos.sum())
    return 2.0 * precision * recall / (precision + recall)


def f1_summary(pred, gt, aggregate: str = F1_MEAN) -> float:
    """
    F1 entre une sélection binaire et une ou plusieurs vérités terrain.
    Sans positif des deux côtés : 1 ; sans recouvrement : 0.
    """
    pred = np.asarray(pred).reshape(-1)
    if isinstance(gt, np.ndarray) and gt.ndim == 1:
        references = [gt]
    elif len(gt) and np.ndim(gt[0]) == 0:
        references = [np.asarray(gt)]
    else:
        references = [np.asarray(g).reshape(-1) for g in gt]
    if not references:
        raise DimensionMismatchError("f1_summary: liste de vérités terrain vide")
    values = [_f1_single(pred, reference) for reference in references]
    if aggregate == F1_MAX:
        return float(max(values))
    if aggregate == F1_MEAN:
        return float(np.mean(values))
    raise ValueError(f"Agrégation F1 inconnue '{aggregate}'")


# ---------------------------------------------------------------------------
# Corrélations de rang
# ---------------------------------------------------------------------------

def _rank_inputs(a, b, name: str):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise DimensionMismatchError(f"{name}: longueurs {a.size} et {b.size} différentes")
    if a.size < 2:
        raise DimensionMismatchError(f"{name}: au moins deux valeurs nécessaires")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        logger.warning("[Metrics] %s indéfini : entrée constante", name)
        return None
    return a, b


def kendall_tau(a, b) -> float:
    """tau-b (corrigé des égalités) ; NaN si une entrée est constante"""
    inputs = _rank_inputs(a, b, 'kendall_tau')
    if inputs is None:
        return math.nan
    tau, _ = stats.kendalltau(*inputs, variant='b')
    return float(tau)


def spearman_rho(a, b) -> float:
    """Corrélation de Pearson des rangs moyens ; NaN si une entrée est constante"""
    inputs = _rank_inputs(a, b, 'spearman_rho')
    if inputs is None:
        return math.nan
    rho, _ = stats.spearmanr(*inputs)
    return float(rho)


# ---------------------------------------------------------------------------
# MAP
# ---------------------------------------------------------------------------

def _ranking(scores: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(scores.size), -scores))


def map_at_rho(pred_shot_scores, gt_shot_scores, rho: float) -> float:
    """
    Précision moyenne du classement prédit ; positifs = les max(1, floor(rho * n))
    meilleurs plans selon la vérité terrain (égalités vers l'indice le plus petit).
    """
    pred = np.asarray(pred_shot_scores, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt_shot_scores, dtype=np.float64).reshape(-1)
    if pred.size != gt.size:
        raise DimensionMismatchError(f"map_at_rho: {pred.size} scores prédits pour {gt.size} plans")
    if pred.size == 0:
        raise DimensionMismatchError("map_at_rho: aucun plan")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho hors de ]0, 1]: {rho}")

    n_positive = max(1, int(math.floor(rho * gt.size + 1e-9)))
    positive = np.zeros(gt.size, dtype=bool)
    positive[_ranking(gt)[:n_positive]] = True

    hits = positive[_ranking(pred)]
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, ranks.size + 1) / ranks
    return float(precisions.mean())


def map_key(rho: float) -> str:
    return f"map_{rho * 100:g}"


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------

class WhitespaceTokenizer(tokenizers.Tokenizer):
    """Découpage sur les espaces après translittération ASCII et passage en minuscules"""

    def tokenize(self, text):
        return unidecode(text or '').lower().split()


@dataclass
class RougeResult:
    rouge_1: float
    rouge_2: float
    rouge_l: float

    def as_tuple(self):
        return self.rouge_1, self.rouge_2, self.rouge_l


_scorer = rouge_scorer.RougeScorer(['rouge1', 'rouge2', 'rougeL'], tokenizer=WhitespaceTokenizer())


def rouge_scores(pred_sentences: Sequence[str], gt_sentences: Sequence[str]) -> RougeResult:
    """F-mesures ROUGE-1, ROUGE-2 et ROUGE-L des résumés concaténés"""
    gt_text = ' '.join(s for s in gt_sentences if s)
    if not gt_text.strip():
        raise ValueError("rouge_scores: résumé de référence vide")
    pred_text = ' '.join(s for s in pred_sentences if s)
    scores = _scorer.score(gt_text, pred_text)
    return RougeResult(
        rouge_1=float(scores['rouge1'].fmeasure),
        rouge_2=float(scores['rouge2'].fmeasure),
        rouge_l=float(scores['rougeL'].fmeasure),
    )


# ---------------------------------------------------------------------------
# Similarité cosinus
# ---------------------------------------------------------------------------

def _unit_rows(features: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1)
    zero = norms == 0
    if zero.any():
        logger.warning("[Metrics] cosine_sim_metric : %d ligne(s) de norme nulle ignorée(s) dans %s", int(zero.sum()), name)
    return features[~zero] / norms[~zero, None]


def cosine_sim_metric(pred_frame_features, gt_frame_features) -> float:
    """Moyenne, sur les frames de référence, de la meilleure similarité cosinus à une frame prédite"""
    pred = np.asarray(pred_frame_features, dtype=np.float64)
    gt = np.asarray(gt_frame_features, dtype=np.float64)
    if pred.ndim != 2 or gt.ndim != 2 or pred.shape[1] != gt.shape[1]:
        raise DimensionMismatchError(f"cosine_sim_metric: formes {pred.shape} et {gt.shape} incompatibles")
    if pred.shape[0] < 1 or gt.shape[0] < 1:
        raise DimensionMismatchError("cosine_sim_metric: ensembles de frames vides")
    pred = _unit_rows(pred, 'pred')
    gt = _unit_rows(gt, 'gt')
    if pred.shape[0] == 0 or gt.shape[0] == 0:
        return math.nan
    return float((gt @ pred.T).max(axis=1).mean())


# ---------------------------------------------------------------------------
# Rapport
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    per_video: List[Dict] = field(default_factory=list)
    protocol: Dict = field(default_factory=dict)
    split: Optional[str] = None

    def metric_names(self) -> List[str]:
        names = []
        for row in self.per_video:
            for key, value in row.items():
                if key != 'video_id' and isinstance(value, (int, float)) and key not in names:
                    names.append(key)
        return names

    @property
    def aggregates(self) -> Dict[str, float]:
        result = {}
        for name in self.metric_names():
            values = [row[name] for row in self.per_video if row.get(name) is not None]
            finite = [v for v in values if math.isfinite(v)]
            result[name] = float(np.mean(finite)) if finite else math.nan
        return result

    @property
    def undefined(self) -> Dict[str, int]:
        """Nombre de vidéos où une corrélation est indéfinie (entrée constante)"""
        counts = {}
        for name in ('kendall_tau', 'spearman_rho'):
            counts[name] = sum(1 for row in self.per_video if row.get(name) is not None and math.isnan(row[name]))
        return counts

    def get(self, name: str, default=math.nan) -> float:
        return self.aggregates.get(name, default)

    def to_dict(self) -> dict:
        return {
            'split': self.split,
            'protocol': self.protocol,
            'aggregates': _json_safe(self.aggregates),
            'undefined': self.undefined,
            'per_video': [_json_safe(row) for row in self.per_video],
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding='utf-8')
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = ['video_id'] + self.metric_names()
        with path.open('w', newline='', encoding='utf-8') as handle:
            writer = csv.DictWriter(handle, fieldnames=columns, extrasaction='ignore')
            writer.writeheader()
            for row in self.per_video:
                writer.writerow({key: ('' if row.get(key) is None else row.get(key)) for key in columns})
        return path


def _json_safe(mapping: dict) -> dict:
    safe = {}
    for key, value in mapping.items():
        if isinstance(value, float) and not math.isfinite(value):
            safe[key] = None
        else:
            safe[key] = value
    return safe


def _sentence_texts(sample: VideoSample, selected: np.ndarray) -> Optional[List[str]]:
    texts = [s.text for s in sample.subtitles]
    if not texts or any(t is None for t in texts):
        return None
    return [texts[j] for j in np.flatnonzero(selected)]


def evaluate_sample(
    sample: VideoSample,
    frame_scores: np.ndarray,
    sentence_scores: np.ndarray,
    protocol: EvalProtocol,
    replay_threshold: float = DEFAULT_REPLAY_THRESHOLD,
    shots=None,
    rank_scores: Optional[np.ndarray] = None,
) -> Dict:
    """
    Toutes les mesures d'une vidéo à partir des scores prédits. `rank_scores`
    remplace frame_scores pour tau, rho et MAP (par défaut les mêmes).
    """
    rank_scores = frame_scores if rank_scores is None else rank_scores
    gt_summaries = ground_truth_summaries(sample, replay_threshold)
    gt_scores = ground_truth_scores(sample, replay_threshold)
    if shots is None:
        shots = resolve_shots(sample, protocol.kts_max_change_points, protocol.kts_penalty)

    topk = None
    if protocol.summary_mode == SUMMARY_TOPK and protocol.fraction is None:
        # Nombre de positifs de la vérité terrain (moyenne des annotateurs)
        topk = int(round(np.mean([np.sum(g) for g in gt_summaries])))
    selection = summarize_scores(
        frame_scores,
        sentence_scores,
        mode=protocol.summary_mode,
        budget_ratio=protocol.budget_ratio,
        fraction=protocol.fraction,
        shots=shots,
        sentence_threshold=protocol.sentence_threshold,
        sentence_count=protocol.sentence_count,
        topk=topk,
    )

    row = {
        'video_id': sample.video_id,
        'n_frames': sample.n_frames,
        'n_selected': int(selection.selected_frames.sum()),
        'f1': f1_summary(selection.selected_frames, gt_summaries, protocol.f1_aggregate),
        'kendall_tau': kendall_tau(rank_scores, gt_scores),
        'spearman_rho': spearman_rho(rank_scores, gt_scores),
    }

    pred_shots = frame_to_shot_scores(rank_scores, shots)
    gt_shots = frame_to_shot_scores(gt_scores, shots)
    for rho in protocol.map_rhos:
        row[map_key(rho)] = map_at_rho(pred_shots, gt_shots, rho)

    if sample.sentence_labels is not None:
        gt_texts = _sentence_texts(sample, np.asarray(sample.sentence_labels))
        pred_texts = _sentence_texts(sample, selection.selected_sentences)
        if gt_texts and pred_texts is not None:
            rouge = rouge_scores(pred_texts, gt_texts)
            row.update({'rouge_1': rouge.rouge_1, 'rouge_2': rouge.rouge_2, 'rouge_l': rouge.rouge_l})

    gt_frames = np.flatnonzero(gt_summaries[0])
    if gt_frames.size:
        pred_frames = np.flatnonzero(selection.selected_frames)
        if pred_frames.size:
            row['cosine'] = cosine_sim_metric(sample.frame_features[pred_frames], sample.frame_features[gt_frames])
        else:
            row['cosine'] = 0.0
    return row


def protocol_tags(protocol: EvalProtocol) -> dict:
    return {
        'summary_mode': protocol.summary_mode,
        'budget_ratio': protocol.budget_ratio,
        'fraction': protocol.fraction,
        'f1_aggregate': protocol.f1_aggregate,
        'rank_scores': protocol.rank_scores,
        'map_rhos': list(protocol.map_rhos),
        'sentence_threshold': protocol.sentence_threshold,
        'sentence_count': protocol.sentence_count,
    }


def evaluate_model(
    model,
    samples: Sequence[VideoSample],
    protocol: Optional[EvalProtocol] = None,
    replay_threshold: float = DEFAULT_REPLAY_THRESHOLD,
    shot_cache: Optional[dict] = None,
    split: Optional[str] = None,
) -> EvalReport:
    """Évalue le modèle vidéo par vidéo ; shot_cache évite de relancer KTS à chaque époque"""
    protocol = protocol or EvalProtocol()
    if not samples:
        raise SampleInvariantError("evaluate_model: aucun échantillon à évaluer")
    report = EvalReport(protocol=protocol_tags(protocol), split=split)
    for sample in samples:
        if shot_cache is not None and sample.video_id in shot_cache:
            shots = shot_cache[sample.video_id]
        else:
            shots = resolve_shots(sample, protocol.kts_max_change_points, protocol.kts_penalty)
            if shot_cache is not None:
                shot_cache[sample.video_id] = shots
        outputs = predict_outputs(model, sample)
        frame_scores = outputs.frame_scores_numpy()
        rank_scores = outputs.replay_numpy() if protocol.rank_scores == 'replay' else frame_scores
        report.per_video.append(evaluate_sample(
            sample, frame_scores, outputs.sentence_scores_numpy(), protocol, replay_threshold, shots, rank_scores,
        ))
    logger.info(
        "[Metrics] %d vidéos évaluées%s : F1=%.4f tau=%.4f rho=%.4f",
        len(report.per_video),
        f" ({split})" if split else '',
        report.get('f1'),
        report.get('kendall_tau'),
        report.get('spearman_rho'),
    )
    return report
