"""
Configuration d'expérience (fichier JSON + overrides en ligne de commande),
génération des flags à partir des modèles pydantic, et exécution des runs
d'entraînement / d'évaluation avec suivi en base.
"""
import json
import logging
import math
import types
import typing
from argparse import BooleanOptionalAction
from pathlib import Path
from typing import Dict, Iterable, Optional

from django.conf import settings
from django.db.models import Q
from pydantic import ValidationError

from ..exceptions import ConfigurationError, HierSumError
from ..models import EvaluationRun, TrainingRun
from .checkpoints import load_checkpoint
from .dataset import load_manifest, load_split
from .metrics import EvalReport, evaluate_model
from .pydantic_models import EvalProtocol, ExperimentConfig
from .trainer import fit

logger = logging.getLogger(__name__)

EVAL_FIELDS = (
    'summary_mode',
    'budget_ratio',
    'fraction',
    'f1_aggregate',
    'rank_scores',
    'map_rho',
    'sentence_threshold',
    'sentence_count',
    'kts_max_change_points',
    'kts_penalty',
    'replay_threshold',
)


def flag_name(field_name: str) -> str:
    return '--' + field_name.replace('_', '-')


def _unwrap_optional(annotation):
    origin = typing.get_origin(annotation)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return annotation


def add_model_arguments(parser, model: type, fields: Optional[Iterable[str]] = None) -> None:
    """Un flag --kebab-case par champ du modèle ; défaut None pour distinguer les overrides"""
    names = list(fields) if fields is not None else list(model.model_fields)
    for name in names:
        info = model.model_fields[name]
        annotation = _unwrap_optional(info.annotation)
        origin = typing.get_origin(annotation)
        kwargs = {'dest': name, 'default': None, 'help': info.description}

        if annotation is bool:
            kwargs['action'] = BooleanOptionalAction
        elif origin is typing.Literal:
            kwargs['choices'] = list(typing.get_args(annotation))
        elif origin in (list, typing.List):
            (item,) = typing.get_args(annotation)
            kwargs.update(nargs='+', type=item)
        elif annotation in (int, float):
            kwargs['type'] = annotation
        else:
            kwargs['type'] = str
        parser.add_argument(flag_name(name), **kwargs)


def overrides_from_options(options: dict, fields: Iterable[str]) -> dict:
    return {name: options[name] for name in fields if options.get(name) is not None}


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Fichier de configuration introuvable: {path}")
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: JSON invalide ({exc})") from exc
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path}: un objet JSON est attendu")
    return document


def _validation_message(exc: ValidationError) -> str:
    first = exc.errors()[0]
    location = '.'.join(str(part) for part in first.get('loc', ())) or 'config'
    return f"{location}: {first.get('msg')}"


def build_experiment_config(base: Optional[dict] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Fusionne fichier et overrides puis valide ; vérifie l'existence des chemins référencés"""
    merged = dict(base or {})
    merged.update(overrides or {})
    # Sans checkpoint_dir explicite, les runs vont sous HISUM_RUNS_DIR
    merged.setdefault('checkpoint_dir', str(Path(settings.HISUM_RUNS_DIR) / 'default'))
    try:
        config = ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigurationError(f"Configuration invalide: {_validation_message(exc)}") from exc
    if not config.manifest.is_file():
        raise ConfigurationError(f"manifest introuvable: {config.manifest}")
    if config.init_checkpoint is not None and not config.init_checkpoint.is_file():
        raise ConfigurationError(f"init_checkpoint introuvable: {config.init_checkpoint}")
    return config


def build_eval_protocol(options: Dict) -> EvalProtocol:
    values = overrides_from_options(options, [f for f in EVAL_FIELDS if f not in ('map_rho', 'replay_threshold')])
    if options.get('map_rho') is not None:
        values['map_rhos'] = list(options['map_rho'])
    try:
        return EvalProtocol(**values)
    except ValidationError as exc:
        raise ConfigurationError(f"Protocole d'évaluation invalide: {_validation_message(exc)}") from exc


def _finite(value):
    if value is None or not isinstance(value, (int, float)) or not math.isfinite(value):
        return None
    return float(value)


def run_training(config: ExperimentConfig, name: str = '') -> TrainingRun:
    """Crée un TrainingRun, lance fit et enregistre le résultat (ou l'erreur)"""
    run = TrainingRun.objects.create(
        name=name,
        config=json.loads(config.model_dump_json()),
        checkpoint_dir=str(config.checkpoint_dir),
    )
    logger.info("[TrainingRun] Run %s créé (%s)", run.id, config.manifest)
    run.status = TrainingRun.STATUS_PROCESSING
    run.save(update_fields=['status', 'updated_at'])

    try:
        manifest = load_manifest(config.manifest)
        result = fit(
            manifest,
            config.to_model_config(manifest.video_dim, manifest.text_dim),
            config.to_train_config(),
            config.to_eval_protocol(),
        )
    except Exception as exc:
        logger.exception("[TrainingRun] Run %s en échec: %s", run.id, exc)
        run.status = TrainingRun.STATUS_ERROR
        run.error_message = str(exc)
        run.save(update_fields=['status', 'error_message', 'updated_at'])
        raise

    run.status = TrainingRun.STATUS_SUCCESS
    run.best_checkpoint = str(result.best_checkpoint)
    run.last_checkpoint = str(result.last_checkpoint)
    run.history_path = str(result.history_path)
    run.best_val_f1 = _finite(result.best_val_f1)
    run.parent_steps = result.parent_steps
    run.child_steps = result.child_steps
    run.save()
    logger.info("[TrainingRun] Run %s terminé", run.id)
    return run


def _training_run_for(checkpoint) -> Optional[TrainingRun]:
    """Le run d'entraînement le plus récent qui a produit ce checkpoint, s'il est connu"""
    path = Path(checkpoint)
    candidates = {str(path), str(path.resolve())}
    return TrainingRun.objects.filter(
        Q(best_checkpoint__in=candidates) | Q(last_checkpoint__in=candidates)
    ).order_by('-created_at').first()


def run_evaluation(
    checkpoint,
    manifest_path,
    protocol: EvalProtocol,
    split: Optional[str] = 'test',
    replay_threshold: float = 0.15,
) -> tuple:
    """Évalue un checkpoint sur un split et enregistre un EvaluationRun"""
    loaded = load_checkpoint(checkpoint)
    manifest = load_manifest(manifest_path)
    if (loaded.config.video_dim, loaded.config.text_dim) != (manifest.video_dim, manifest.text_dim):
        raise HierSumError(
            f"Dimensions du checkpoint ({loaded.config.video_dim}, {loaded.config.text_dim}) "
            f"différentes du manifest ({manifest.video_dim}, {manifest.text_dim})"
        )
    samples = load_split(manifest, split)
    if not samples:
        raise ConfigurationError(f"Aucune vidéo dans le split '{split}' de {manifest_path}")

    report: EvalReport = evaluate_model(loaded.model, samples, protocol, replay_threshold, split=split)
    aggregates = report.aggregates
    evaluation = EvaluationRun.objects.create(
        checkpoint=str(checkpoint),
        manifest=str(manifest_path),
        split=split or '',
        report=report.to_dict(),
        f1=_finite(aggregates.get('f1')),
        kendall_tau=_finite(aggregates.get('kendall_tau')),
        spearman_rho=_finite(aggregates.get('spearman_rho')),
        training_run=_training_run_for(checkpoint),
    )
    return evaluation, report
