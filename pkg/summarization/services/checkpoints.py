"""
Archive de checkpoint : zip contenant le tag de format, la configuration du
réseau (JSON), des métadonnées et un fichier HSUM par tenseur de paramètres.
Les entrées sont écrites dans un ordre et avec une date fixes pour que deux
sauvegardes des mêmes paramètres soient identiques octet pour octet.
"""
import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from pydantic import ValidationError

from ..exceptions import CheckpointError, FeatureFileError
from .dataset import decode_feature_array, encode_feature_array
from .network import HierSumModel
from .pydantic_models import ModelConfig

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'hsum-checkpoint/1'
FIXED_DATE = (1980, 1, 1, 0, 0, 0)

FORMAT_ENTRY = 'format'
CONFIG_ENTRY = 'config.json'
METADATA_ENTRY = 'metadata.json'
PARAMS_PREFIX = 'params/'
PARAMS_SUFFIX = '.hsum'


@dataclass
class LoadedCheckpoint:
    model: HierSumModel
    config: ModelConfig
    metadata: dict = field(default_factory=dict)


def _write_entry(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(path, model: HierSumModel, metadata: Optional[dict] = None) -> Path:
    """Sauvegarde les paramètres du modèle (float32) et sa configuration"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + '.tmp')

    with zipfile.ZipFile(tmp_path, 'w') as archive:
        _write_entry(archive, FORMAT_ENTRY, CHECKPOINT_FORMAT.encode('ascii'))
        _write_entry(archive, CONFIG_ENTRY, model.config.model_dump_json(indent=2).encode('utf-8'))
        _write_entry(
            archive,
            METADATA_ENTRY,
            json.dumps(metadata or {}, indent=2, sort_keys=True).encode('utf-8'),
        )
        for name, tensor in model.state_dict().items():
            values = tensor.detach().cpu().numpy().astype(np.float32)
            if values.ndim > 2:
                raise CheckpointError(f"Paramètre '{name}' de rang {values.ndim} non supporté")
            _write_entry(archive, f"{PARAMS_PREFIX}{name}{PARAMS_SUFFIX}", encode_feature_array(values))

    tmp_path.replace(path)
    logger.info("[Checkpoint] Sauvegardé %s", path)
    return path


def _read_archive(path: Path):
    if not path.is_file():
        raise CheckpointError(f"Checkpoint introuvable : {path}")
    try:
        with zipfile.ZipFile(path) as archive:
            names = set(archive.namelist())
            if FORMAT_ENTRY not in names or CONFIG_ENTRY not in names:
                raise CheckpointError(f"{path}: archive incomplète (format ou config.json manquant)")
            tag = archive.read(FORMAT_ENTRY).decode('ascii', errors='replace')
            if tag != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: format '{tag}' non supporté ({CHECKPOINT_FORMAT} attendu)")
            config_raw = archive.read(CONFIG_ENTRY)
            metadata = json.loads(archive.read(METADATA_ENTRY)) if METADATA_ENTRY in names else {}
            params = {
                name[len(PARAMS_PREFIX):-len(PARAMS_SUFFIX)]: decode_feature_array(archive.read(name), f"{path}:{name}")
                for name in sorted(names)
                if name.startswith(PARAMS_PREFIX) and name.endswith(PARAMS_SUFFIX)
            }
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"{path}: archive zip invalide") from exc
    except FeatureFileError as exc:
        raise CheckpointError(str(exc)) from exc

    try:
        config = ModelConfig.model_validate_json(config_raw)
    except ValidationError as exc:
        raise CheckpointError(f"{path}: configuration invalide ({exc.errors()[0].get('msg')})") from exc
    return config, metadata, params


def _assign(model: HierSumModel, params: dict, source: Path) -> None:
    state = model.state_dict()
    missing = sorted(set(state) - set(params))
    unexpected = sorted(set(params) - set(state))
    if missing or unexpected:
        raise CheckpointError(
            f"{source}: paramètres incompatibles (manquants={missing[:3]}, inattendus={unexpected[:3]})"
        )
    restored = {}
    for name, reference in state.items():
        values = params[name]
        if values.size != reference.numel():
            raise CheckpointError(
                f"{source}: '{name}' contient {values.size} valeurs, {reference.numel()} attendues"
            )
        restored[name] = torch.from_numpy(values.reshape(tuple(reference.shape))).to(reference.dtype)
    model.load_state_dict(restored)


def load_checkpoint(path) -> LoadedCheckpoint:
    """Reconstruit le modèle depuis l'archive ; le modèle est retourné en mode évaluation"""
    path = Path(path)
    config, metadata, params = _read_archive(path)
    model = HierSumModel(config)
    _assign(model, params, path)
    model.eval()
    return LoadedCheckpoint(model=model, config=config, metadata=metadata)


def load_weights_into(model: HierSumModel, path) -> dict:
    """
    Charge les poids d'un checkpoint dans un modèle existant (affinage).
    Les dimensions d'entrée et l'architecture doivent correspondre.
    """
    path = Path(path)
    config, metadata, params = _read_archive(path)
    current = model.config
    for name in ('video_dim', 'text_dim', 'hidden_dim', 'n_layers', 'n_heads', 'feedforward_dim'):
        if getattr(config, name) != getattr(current, name):
            raise CheckpointError(
                f"{path}: {name}={getattr(config, name)} dans le checkpoint, {getattr(current, name)} attendu"
            )
    _assign(model, params, path)
    logger.info("[Checkpoint] Poids initiaux chargés depuis %s", path)
    return metadata
