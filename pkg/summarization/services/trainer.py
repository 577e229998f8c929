"""
Protocole d'entraînement hiérarchique : le même modèle F est mis à jour par des
batchs enfant (sous-titres) et, tous les G batchs, par un batch parent
(description globale). AdamW, warmup linéaire puis décroissance cosinus,
évaluation sur le split val à chaque époque, checkpoints best/last et
historique JSON lines.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
from django.conf import settings

from ..exceptions import ConfigurationError, MissingGlobalFeatureError, NonFiniteLossError
from .alignment import MODE_CHILD, MODE_PARENT, parent_text_feature
from .checkpoints import load_weights_into, save_checkpoint
from .dataset import DatasetManifest, VideoSample, load_split, resolve_frame_labels
from .losses import (
    LossParts,
    build_contrastive_sets,
    focal_loss,
    inter_contrastive,
    intra_contrastive,
    mse_replay_loss,
    total_loss,
)
from .metrics import EvalReport, evaluate_model
from .network import HierSumModel, init_params
from .pydantic_models import EvalProtocol, ModelConfig, TrainConfig

logger = logging.getLogger(__name__)

HISTORY_NAME = 'history.jsonl'
BEST_CHECKPOINT = 'best.ckpt'
LAST_CHECKPOINT = 'last.ckpt'


def configure_determinism(threads: Optional[int] = None, deterministic: Optional[bool] = None) -> None:
    """Exécution CPU reproductible : nombre de threads fixe et algorithmes déterministes"""
    threads = threads if threads is not None else getattr(settings, 'HISUM_TORCH_THREADS', 1)
    deterministic = deterministic if deterministic is not None else getattr(settings, 'HISUM_DETERMINISTIC', True)
    torch.set_num_threads(int(threads))
    torch.use_deterministic_algorithms(bool(deterministic))


def batch_role(batch_index: int, global_step: int) -> str:
    """Parent si G >= 1 et batch_index multiple de G ; G=0 : toujours enfant"""
    if batch_index < 1:
        raise ValueError(f"batch_index doit être >= 1 (reçu {batch_index})")
    if global_step >= 1 and batch_index % global_step == 0:
        return MODE_PARENT
    return MODE_CHILD


def lr_schedule(
    step: int,
    total_steps: int,
    base_lr: float,
    warmup_epochs: int,
    steps_per_epoch: int,
    scheduler: str = 'cosine',
) -> float:
    """Warmup linéaire de 0 à base_lr, puis décroissance cosinus jusqu'à 0 à total_steps"""
    if scheduler == 'none':
        return base_lr
    warmup_steps = warmup_epochs * steps_per_epoch
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    decay_steps = total_steps - warmup_steps
    if decay_steps <= 0:
        return base_lr
    progress = min(max(step - warmup_steps, 0) / decay_steps, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class ScheduleState:
    batch_index: int = 0
    epoch: int = 0
    learning_rate: float = 0.0

    def advance(self, learning_rate: float) -> None:
        self.batch_index += 1
        self.learning_rate = learning_rate


@dataclass
class StepResult:
    role: str
    breakdown: Dict[str, float] = field(default_factory=dict)
    n_samples: int = 0
    skipped_samples: int = 0
    grad_norms: Dict[str, float] = field(default_factory=dict)

    @property
    def applied(self) -> bool:
        return self.n_samples > 0


def sentence_labels_for(sample: VideoSample, frame_labels: np.ndarray) -> np.ndarray:
    """Étiquettes explicites, sinon vote majoritaire des frames couvertes"""
    if sample.sentence_labels is not None:
        return np.asarray(sample.sentence_labels, dtype=np.int64)
    return np.array(
        [int(frame_labels[start:end].mean() >= 0.5) for start, end in sample.subtitle_spans()],
        dtype=np.int64,
    )


def _grad_norm(module: torch.nn.Module) -> float:
    norms = [p.grad.detach().norm() for p in module.parameters() if p.grad is not None]
    if not norms:
        return 0.0
    return float(torch.linalg.vector_norm(torch.stack(norms)))


def compute_loss_parts(
    model: HierSumModel,
    batch: Sequence[VideoSample],
    role: str,
    config: TrainConfig,
) -> tuple:
    """
    Passe avant sur chaque échantillon du batch puis assemble les termes de perte.
    Retourne (LossParts ou None si tout le batch est ignoré, nombre d'échantillons ignorés).
    """
    weights = config.weights
    outputs, used = [], []
    skipped = 0
    for sample in batch:
        if role == MODE_PARENT and parent_text_feature(sample, config.parent_text_source) is None:
            if config.strict_parent:
                raise MissingGlobalFeatureError(f"'{sample.video_id}': aucun texte global pour le batch parent")
            logger.warning("[Trainer] '%s' ignoré : pas de texte global pour l'étape parent", sample.video_id)
            skipped += 1
            continue
        if role == MODE_CHILD and sample.n_sentences == 0:
            logger.warning("[Trainer] '%s' ignoré : aucun sous-titre pour l'étape enfant", sample.video_id)
            skipped += 1
            continue
        outputs.append(model(sample, mode=role, parent_text_source=config.parent_text_source))
        used.append(sample)
    if not used:
        return None, skipped

    cls_video, cls_text, mse, intra = [], [], [], []
    for sample, out in zip(used, outputs):
        frame_labels = resolve_frame_labels(sample, config.replay_threshold)
        cls_video.append(focal_loss(out.frame_scores, frame_labels, weights.focal_alpha, weights.focal_gamma))
        if sample.replay_scores is not None:
            mse.append(mse_replay_loss(out.replay_pred, sample.replay_scores))
        if role == MODE_CHILD:
            sentence_labels = sentence_labels_for(sample, frame_labels)
            cls_text.append(focal_loss(out.sentence_scores, sentence_labels, weights.focal_alpha, weights.focal_gamma))
            sets = build_contrastive_sets(
                out.frame_scores,
                frame_labels,
                out.sentence_scores,
                sentence_labels,
                exclusion_window=config.exclusion_window,
                top_k=config.hard_negative_top_k,
            )
            intra.append(intra_contrastive(out.frame_tokens, out.text_tokens, sets, weights.temperature))

    parts = LossParts(
        cls_video=torch.stack(cls_video).mean(),
        cls_text=torch.stack(cls_text).mean() if cls_text else None,
        mse=torch.stack(mse).mean() if mse else None,
        inter=inter_contrastive(
            torch.stack([o.cls_video for o in outputs]),
            torch.stack([o.cls_text for o in outputs]),
            weights.temperature,
        ),
        intra=torch.stack(intra).mean() if intra else None,
    )
    return parts, skipped


def train_step(
    model: HierSumModel,
    optimizer: torch.optim.Optimizer,
    batch: Sequence[VideoSample],
    role: str,
    config: TrainConfig,
    learning_rate: Optional[float] = None,
    batch_index: int = 0,
) -> StepResult:
    """Un pas d'optimisation sur total_loss(role) ; les deux rôles mettent à jour les mêmes paramètres"""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    parts, skipped = compute_loss_parts(model, batch, role, config)
    result = StepResult(role=role, skipped_samples=skipped)
    if parts is None:
        return result

    loss, breakdown = total_loss(parts, config.weights, role, config.parent_loss)
    if not torch.isfinite(loss):
        logger.error("[Trainer] Perte non finie au batch %d (%s) : %s", batch_index, role, breakdown)
        raise NonFiniteLossError(batch_index, breakdown)

    loss.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    result.grad_norms = {name: _grad_norm(head) for name, head in model.head_parameters().items()}
    if learning_rate is not None:
        for group in optimizer.param_groups:
            group['lr'] = learning_rate
    optimizer.step()

    result.breakdown = breakdown
    result.n_samples = len(batch) - skipped
    return result


def make_batches(samples: Sequence[VideoSample], batch_size: int, rng: np.random.Generator) -> List[List[VideoSample]]:
    order = rng.permutation(len(samples))
    return [[samples[i] for i in order[start:start + batch_size]] for start in range(0, len(order), batch_size)]


def draw_parent_batch(samples: Sequence[VideoSample], batch_size: int, rng: np.random.Generator) -> List[VideoSample]:
    """Tirage indépendant dans le split d'entraînement"""
    size = min(batch_size, len(samples))
    return [samples[i] for i in rng.choice(len(samples), size=size, replace=False)]


@dataclass
class FitResult:
    model: HierSumModel
    history: List[dict]
    best_checkpoint: Path
    last_checkpoint: Path
    history_path: Path
    best_val_f1: float
    parent_steps: int = 0
    child_steps: int = 0
    skipped_parent_samples: int = 0
    skipped_child_samples: int = 0
    last_report: Optional[EvalReport] = None


class _History:
    """Historique JSON lines, une ligne par pas et par époque"""

    def __init__(self, path: Path):
        self.path = path
        self.records: List[dict] = []
        path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = path.open('w', encoding='utf-8')

    def write(self, record: dict) -> None:
        self.records.append(record)
        self._handle.write(json.dumps(record, sort_keys=True) + '\n')
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()


def _finite_or_none(values: dict) -> dict:
    return {k: (v if isinstance(v, (int, float)) and math.isfinite(v) else None) for k, v in values.items()}


def fit(
    manifest: DatasetManifest,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_protocol: Optional[EvalProtocol] = None,
    on_epoch_end: Optional[Callable[[int, EvalReport], None]] = None,
) -> FitResult:
    """
    Entraîne F sur le split train : epochs x batchs, rôle de chaque batch donné
    par batch_role, évaluation val à chaque époque, best.ckpt (F1 val) et last.ckpt.
    """
    eval_protocol = eval_protocol or EvalProtocol()
    train_samples = [s.validate(require_labels=True) for s in load_split(manifest, 'train')]
    if not train_samples:
        raise ConfigurationError("Le split train est vide")
    val_samples = load_split(manifest, 'val')
    val_split = 'val'
    if not val_samples:
        logger.warning("[Trainer] Split val vide : évaluation sur le split train")
        val_samples, val_split = train_samples, 'train'

    configure_determinism()
    checkpoint_dir = Path(train_config.checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)

    model = init_params(model_config, train_config.seed)
    if train_config.init_checkpoint:
        load_weights_into(model, train_config.init_checkpoint)

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_config.learning_rate, weight_decay=train_config.weight_decay,
    )
    order_rng = np.random.default_rng(train_config.seed)
    parent_rng = np.random.default_rng(train_config.seed + 1)
    steps_per_epoch = math.ceil(len(train_samples) / train_config.batch_size)
    total_steps = train_config.epochs * steps_per_epoch

    logger.info(
        "[Trainer] Début : %d vidéos train, %d %s, %d époques x %d batchs, G=%d",
        len(train_samples), len(val_samples), val_split, train_config.epochs, steps_per_epoch, train_config.global_step,
    )

    history = _History(checkpoint_dir / HISTORY_NAME)
    state = ScheduleState()
    counts = {MODE_PARENT: 0, MODE_CHILD: 0}
    skipped_parent = 0
    skipped_child = 0
    best_f1 = -math.inf
    best_path = checkpoint_dir / BEST_CHECKPOINT
    shot_cache: dict = {}
    report = None

    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(train_config.seed)
            for epoch in range(1, train_config.epochs + 1):
                state.epoch = epoch
                for child_batch in make_batches(train_samples, train_config.batch_size, order_rng):
                    learning_rate = lr_schedule(
                        state.batch_index, total_steps, train_config.learning_rate,
                        train_config.warmup_epochs, steps_per_epoch, train_config.scheduler,
                    )
                    state.advance(learning_rate)
                    role = batch_role(state.batch_index, train_config.global_step)
                    batch = child_batch
                    if role == MODE_PARENT:
                        batch = draw_parent_batch(train_samples, train_config.batch_size, parent_rng)

                    result = train_step(model, optimizer, batch, role, train_config, learning_rate, state.batch_index)
                    counts[role] += 1
                    if role == MODE_PARENT:
                        skipped_parent += result.skipped_samples
                    else:
                        skipped_child += result.skipped_samples
                    history.write({
                        'type': 'step',
                        'step': state.batch_index,
                        'epoch': epoch,
                        'role': role,
                        'lr': learning_rate,
                        'loss': result.breakdown,
                        'samples': result.n_samples,
                        'skipped': result.skipped_samples,
                        'grad_norms': result.grad_norms,
                    })

                report = evaluate_model(
                    model, val_samples, eval_protocol, train_config.replay_threshold, shot_cache, val_split,
                )
                val_f1 = report.get('f1')
                history.write({
                    'type': 'epoch',
                    'epoch': epoch,
                    'step': state.batch_index,
                    'split': val_split,
                    'val': _finite_or_none(report.aggregates),
                })
                if math.isfinite(val_f1) and val_f1 > best_f1:
                    best_f1 = val_f1
                    save_checkpoint(best_path, model, {'epoch': epoch, 'val_f1': val_f1, 'seed': train_config.seed})
                if on_epoch_end:
                    on_epoch_end(epoch, report)
                logger.info("[Trainer] Époque %d/%d : F1 %s=%.4f", epoch, train_config.epochs, val_split, val_f1)
    finally:
        history.close()

    last_path = save_checkpoint(
        checkpoint_dir / LAST_CHECKPOINT,
        model,
        {'epoch': train_config.epochs, 'val_f1': report.get('f1') if report else None, 'seed': train_config.seed},
    )
    if not best_path.exists():
        save_checkpoint(best_path, model, {'epoch': train_config.epochs, 'val_f1': None, 'seed': train_config.seed})

    logger.info(
        "[Trainer] Terminé : %d pas enfant, %d pas parent, %d échantillons parent et %d enfant ignorés, meilleur F1=%.4f",
        counts[MODE_CHILD], counts[MODE_PARENT], skipped_parent, skipped_child, best_f1,
    )
    model.eval()
    return FitResult(
        model=model,
        history=history.records,
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        history_path=history.path,
        best_val_f1=best_f1,
        parent_steps=counts[MODE_PARENT],
        child_steps=counts[MODE_CHILD],
        skipped_parent_samples=skipped_parent,
        skipped_child_samples=skipped_child,
        last_report=report,
    )
