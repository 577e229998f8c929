"""
Schéma des échantillons hiérarchiques, lecture / écriture des fichiers de
features et du manifest, dérivation des étiquettes depuis les scores de relecture.

Format binaire des features : en-tête de 8 octets (magic "HSUM", u16 lignes,
u16 colonnes, little-endian) suivi des float32 en ordre ligne-majeur.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from ..exceptions import (
    DimensionMismatchError,
    DuplicateVideoIdError,
    FeatureFileError,
    ManifestFileNotFoundError,
    ManifestSchemaError,
    ReplayScoreRangeError,
    SampleInvariantError,
    UnknownVideoError,
)
from .pydantic_models import (
    ManifestDims,
    ManifestDocument,
    ManifestEntry,
    SubtitleMeta,
    VideoLabels,
)

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b'HSUM'
FEATURE_HEADER = struct.Struct('<4sHH')
MAX_AXIS = 0xFFFF

DEFAULT_REPLAY_THRESHOLD = 0.15


# ---------------------------------------------------------------------------
# Fichiers de features
# ---------------------------------------------------------------------------

def encode_feature_array(array) -> bytes:
    """Sérialise un tableau 1-D ou 2-D au format HSUM (1-D -> une ligne)"""
    values = np.asarray(array, dtype='<f4')
    if values.ndim == 1:
        values = values.reshape(1, -1)
    if values.ndim != 2:
        raise FeatureFileError(f"Tableau de rang {values.ndim} non supporté (1 ou 2 attendu)")
    rows, cols = values.shape
    if rows > MAX_AXIS or cols > MAX_AXIS:
        raise FeatureFileError(f"Dimensions {values.shape} hors de la capacité u16 de l'en-tête")
    return FEATURE_HEADER.pack(FEATURE_MAGIC, rows, cols) + np.ascontiguousarray(values).tobytes()


def decode_feature_array(data: bytes, source: str = '<bytes>') -> np.ndarray:
    if len(data) < FEATURE_HEADER.size:
        raise FeatureFileError(f"{source}: fichier trop court pour l'en-tête HSUM")
    magic, rows, cols = FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FeatureFileError(f"{source}: magic invalide {magic!r}")
    expected = FEATURE_HEADER.size + rows * cols * 4
    if len(data) != expected:
        raise FeatureFileError(
            f"{source}: taille {len(data)} octets, {expected} attendus pour [{rows} x {cols}]"
        )
    values = np.frombuffer(data, dtype='<f4', offset=FEATURE_HEADER.size)
    return values.reshape(rows, cols).astype(np.float32)


def write_feature_array(path, array) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_feature_array(array))


def read_feature_array(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ManifestFileNotFoundError(path)
    return decode_feature_array(path.read_bytes(), source=str(path))


# ---------------------------------------------------------------------------
# Échantillons
# ---------------------------------------------------------------------------

@dataclass
class SubtitleSegment:
    """Un sous-titre : feature texte et intervalle de frames [start, end)"""
    text_feature: np.ndarray
    start_frame: int
    end_frame: int
    text: Optional[str] = None


@dataclass
class VideoSample:
    """Une vidéo : features image, sous-titres, description globale, étiquettes"""
    video_id: str
    frame_features: np.ndarray
    subtitles: List[SubtitleSegment] = field(default_factory=list)
    global_feature: Optional[np.ndarray] = None
    frame_labels: Optional[np.ndarray] = None
    sentence_labels: Optional[np.ndarray] = None
    replay_scores: Optional[np.ndarray] = None
    shots: Optional[List[int]] = None
    user_summaries: Optional[List[np.ndarray]] = None
    annotator_scores: Optional[List[np.ndarray]] = None
    description: Optional[str] = None

    @property
    def n_frames(self) -> int:
        return int(self.frame_features.shape[0])

    @property
    def n_sentences(self) -> int:
        return len(self.subtitles)

    @property
    def video_dim(self) -> int:
        return int(self.frame_features.shape[1])

    def subtitle_features(self, text_dim: Optional[int] = None) -> np.ndarray:
        if not self.subtitles:
            width = text_dim if text_dim is not None else (
                self.global_feature.shape[-1] if self.global_feature is not None else 0
            )
            return np.zeros((0, width), dtype=np.float32)
        return np.stack([np.asarray(s.text_feature, dtype=np.float32) for s in self.subtitles])

    def subtitle_spans(self) -> List[tuple]:
        return [(s.start_frame, s.end_frame) for s in self.subtitles]

    def has_training_labels(self) -> bool:
        return self.frame_labels is not None or self.replay_scores is not None

    def validate(self, require_labels: bool = False) -> 'VideoSample':
        """Vérifie tous les invariants ; lève SampleInvariantError sinon"""
        vid = self.video_id
        if self.frame_features.ndim != 2:
            raise SampleInvariantError(f"'{vid}': frame_features doit être [N x D_v]")
        n = self.n_frames
        if n < 1:
            raise SampleInvariantError(f"'{vid}': N doit être >= 1")
        if not np.all(np.isfinite(self.frame_features)):
            raise SampleInvariantError(f"'{vid}': frame_features contient des valeurs non finies")
        validate_subtitle_spans(self.subtitle_spans(), n, context=vid)
        if self.replay_scores is not None:
            scores = np.asarray(self.replay_scores)
            if scores.shape != (n,):
                raise SampleInvariantError(f"'{vid}': replay_scores de longueur {scores.size}, {n} attendu")
            check_replay_range(scores, context=vid)
        if self.frame_labels is not None:
            _check_binary(self.frame_labels, n, 'frame_labels', vid)
        if self.sentence_labels is not None:
            _check_binary(self.sentence_labels, self.n_sentences, 'sentence_labels', vid)
        if self.shots is not None:
            validate_shot_starts(self.shots, n, context=vid)
        for summary in self.user_summaries or []:
            _check_binary(summary, n, 'user_summaries', vid)
        for scores in self.annotator_scores or []:
            if np.asarray(scores).shape != (n,):
                raise SampleInvariantError(f"'{vid}': annotator_scores de longueur incorrecte")
        if require_labels and not self.has_training_labels():
            raise SampleInvariantError(f"'{vid}': ni frame_labels ni replay_scores pour l'entraînement")
        return self


def _check_binary(values, length: int, name: str, vid: str) -> None:
    array = np.asarray(values)
    if array.shape != (length,):
        raise SampleInvariantError(f"'{vid}': {name} de longueur {array.size}, {length} attendu")
    if not np.all((array == 0) | (array == 1)):
        raise SampleInvariantError(f"'{vid}': {name} doit être binaire")


def validate_subtitle_spans(spans: Sequence[tuple], n_frames: int, context: str = '') -> None:
    for index, (start, end) in enumerate(spans):
        if not 0 <= start < end <= n_frames:
            raise SampleInvariantError(
                f"'{context}': sous-titre {index} [{start}, {end}) hors de [0, {n_frames})"
            )


def validate_shot_starts(starts: Sequence[int], n_frames: int, context: str = '') -> None:
    starts = list(starts)
    if not starts or starts[0] != 0:
        raise SampleInvariantError(f"'{context}': le premier plan doit commencer à 0")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise SampleInvariantError(f"'{context}': débuts de plans non strictement croissants")
    if starts[-1] >= n_frames:
        raise SampleInvariantError(f"'{context}': début de plan {starts[-1]} >= N={n_frames}")


# ---------------------------------------------------------------------------
# Étiquettes
# ---------------------------------------------------------------------------

def check_replay_range(scores, context: str = '') -> None:
    scores = np.asarray(scores, dtype=np.float64)
    bad = np.flatnonzero(~((scores >= 0.0) & (scores <= 1.0)))
    if bad.size:
        raise ReplayScoreRangeError(
            f"{context + ': ' if context else ''}score de relecture hors de [0, 1] "
            f"à l'indice {int(bad[0])} ({scores[bad[0]]})"
        )


def replay_to_labels(scores, threshold: float = DEFAULT_REPLAY_THRESHOLD) -> np.ndarray:
    """Une frame est importante (1) si son score de relecture est >= threshold"""
    scores = np.asarray(scores, dtype=np.float64)
    check_replay_range(scores)
    return (scores >= threshold).astype(np.int64)


def resolve_frame_labels(sample: VideoSample, threshold: float = DEFAULT_REPLAY_THRESHOLD) -> np.ndarray:
    """Étiquettes explicites si présentes, sinon dérivées des scores de relecture"""
    if sample.frame_labels is not None:
        return np.asarray(sample.frame_labels, dtype=np.int64)
    if sample.replay_scores is not None:
        return replay_to_labels(sample.replay_scores, threshold)
    raise SampleInvariantError(f"'{sample.video_id}': aucune étiquette d'image disponible")


def ground_truth_scores(sample: VideoSample, threshold: float = DEFAULT_REPLAY_THRESHOLD) -> np.ndarray:
    """Scores d'importance de référence : moyenne des annotateurs, puis relecture, puis étiquettes"""
    if sample.annotator_scores:
        return np.mean(np.stack([np.asarray(s, dtype=np.float64) for s in sample.annotator_scores]), axis=0)
    if sample.replay_scores is not None:
        return np.asarray(sample.replay_scores, dtype=np.float64)
    return resolve_frame_labels(sample, threshold).astype(np.float64)


def ground_truth_summaries(sample: VideoSample, threshold: float = DEFAULT_REPLAY_THRESHOLD) -> List[np.ndarray]:
    if sample.user_summaries:
        return [np.asarray(s, dtype=np.int64) for s in sample.user_summaries]
    return [resolve_frame_labels(sample, threshold)]


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Manifest validé ; les chemins des entrées sont relatifs à root"""
    root: Path
    dims: ManifestDims
    entries: Dict[str, ManifestEntry]

    @property
    def video_dim(self) -> int:
        return self.dims.video

    @property
    def text_dim(self) -> int:
        return self.dims.text

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, video_id) -> bool:
        return video_id in self.entries

    def ids(self, split: Optional[str] = None) -> List[str]:
        return [vid for vid, entry in self.entries.items() if split is None or entry.split == split]

    def splits(self) -> Dict[str, List[str]]:
        return {name: self.ids(name) for name in ('train', 'val', 'test')}

    def entry(self, video_id: str) -> ManifestEntry:
        try:
            return self.entries[video_id]
        except KeyError:
            raise UnknownVideoError(video_id) from None

    def path(self, relative: str) -> Path:
        return self.root / relative


def _entry_label(raw_entries, location) -> str:
    # location = ('entries', index, ...) dans les erreurs pydantic
    if len(location) >= 2 and location[0] == 'entries' and isinstance(location[1], int):
        index = location[1]
        try:
            return f"entrée {index} ('{raw_entries[index].get('video_id', '?')}')"
        except (IndexError, AttributeError):
            return f"entrée {index}"
    return '.'.join(str(part) for part in location) or 'document'


def load_manifest(path) -> DatasetManifest:
    """Charge et valide un manifest JSON (schéma, unicité des ids, existence des fichiers)"""
    path = Path(path)
    if not path.is_file():
        raise ManifestFileNotFoundError(path)

    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise ManifestSchemaError(f"{path}: JSON invalide ({exc})") from exc

    try:
        document = ManifestDocument.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        raw_entries = raw.get('entries', []) if isinstance(raw, dict) else []
        where = _entry_label(raw_entries, first.get('loc', ()))
        raise ManifestSchemaError(f"{path}: {where}: {first.get('msg')}") from exc

    root = path.parent
    entries: Dict[str, ManifestEntry] = {}
    for entry in document.entries:
        if entry.video_id in entries:
            raise DuplicateVideoIdError(entry.video_id)
        for relative in (entry.features, entry.labels, entry.text_features, entry.global_feature):
            if relative and not (root / relative).is_file():
                raise ManifestFileNotFoundError(root / relative, video_id=entry.video_id)
        entries[entry.video_id] = entry

    manifest = DatasetManifest(root=root, dims=document.dims, entries=entries)
    logger.info(
        "[Dataset] Manifest %s chargé : %d vidéos (%s)",
        path,
        len(manifest),
        ', '.join(f"{name}={len(ids)}" for name, ids in manifest.splits().items()),
    )
    return manifest


def _read_labels(path: Path, video_id: str) -> VideoLabels:
    try:
        return VideoLabels.model_validate_json(path.read_text(encoding='utf-8'))
    except ValidationError as exc:
        first = exc.errors()[0]
        location = '.'.join(str(part) for part in first.get('loc', ()))
        raise ManifestSchemaError(f"'{video_id}': {path}: {location}: {first.get('msg')}") from exc


def load_sample(manifest: DatasetManifest, video_id: str) -> VideoSample:
    """Charge une vidéo du manifest et vérifie tous ses invariants"""
    entry = manifest.entry(video_id)
    frame_features = read_feature_array(manifest.path(entry.features))
    if frame_features.shape[1] != manifest.video_dim:
        raise DimensionMismatchError(
            f"'{video_id}': D_v={frame_features.shape[1]}, le manifest annonce {manifest.video_dim}"
        )

    labels = _read_labels(manifest.path(entry.labels), video_id)
    if labels.n_frames != frame_features.shape[0]:
        raise SampleInvariantError(
            f"'{video_id}': {frame_features.shape[0]} frames dans les features, {labels.n_frames} dans les étiquettes"
        )

    n_subtitles = len(labels.subtitles)
    if n_subtitles:
        if not entry.text_features:
            raise SampleInvariantError(f"'{video_id}': {n_subtitles} sous-titres mais aucun fichier text_features")
        text_features = read_feature_array(manifest.path(entry.text_features))
        if text_features.shape[1] != manifest.text_dim:
            raise DimensionMismatchError(
                f"'{video_id}': D_t={text_features.shape[1]}, le manifest annonce {manifest.text_dim}"
            )
        if text_features.shape[0] != n_subtitles:
            raise SampleInvariantError(
                f"'{video_id}': {text_features.shape[0]} features texte pour {n_subtitles} sous-titres"
            )
    else:
        text_features = np.zeros((0, manifest.text_dim), dtype=np.float32)

    global_feature = None
    if entry.global_feature:
        global_rows = read_feature_array(manifest.path(entry.global_feature))
        if global_rows.shape != (1, manifest.text_dim):
            raise DimensionMismatchError(
                f"'{video_id}': description globale de forme {global_rows.shape}, (1, {manifest.text_dim}) attendu"
            )
        global_feature = global_rows[0]

    subtitles = [
        SubtitleSegment(
            text_feature=text_features[index],
            start_frame=meta.start_frame,
            end_frame=meta.end_frame,
            text=meta.text,
        )
        for index, meta in enumerate(labels.subtitles)
    ]

    sample = VideoSample(
        video_id=video_id,
        frame_features=frame_features,
        subtitles=subtitles,
        global_feature=global_feature,
        frame_labels=_optional_array(labels.frame_labels, np.int64),
        sentence_labels=_optional_array(labels.sentence_labels, np.int64),
        replay_scores=_optional_array(labels.replay_scores, np.float64),
        shots=list(entry.shots) if entry.shots is not None else None,
        user_summaries=[np.asarray(s, dtype=np.int64) for s in labels.user_summaries] if labels.user_summaries else None,
        annotator_scores=[np.asarray(s, dtype=np.float64) for s in labels.annotator_scores] if labels.annotator_scores else None,
        description=labels.description,
    )
    return sample.validate()


def load_split(manifest: DatasetManifest, split: Optional[str]) -> List[VideoSample]:
    return [load_sample(manifest, video_id) for video_id in manifest.ids(split)]


def _optional_array(values, dtype):
    if values is None:
        return None
    return np.asarray(values, dtype=dtype)


def _as_list(values):
    if values is None:
        return None
    return np.asarray(values).tolist()


def write_sample(root, sample: VideoSample, split: str = 'train', directory: str = 'videos') -> ManifestEntry:
    """Écrit les fichiers d'une vidéo sous root/directory et retourne l'entrée de manifest"""
    root = Path(root)
    sample.validate()
    base = f"{directory}/{sample.video_id}"

    write_feature_array(root / f"{base}.frames.hsum", sample.frame_features)
    text_relative = None
    if sample.subtitles:
        text_relative = f"{base}.subtitles.hsum"
        write_feature_array(root / text_relative, sample.subtitle_features())
    global_relative = None
    if sample.global_feature is not None:
        global_relative = f"{base}.global.hsum"
        write_feature_array(root / global_relative, np.asarray(sample.global_feature).reshape(1, -1))

    labels = VideoLabels(
        n_frames=sample.n_frames,
        subtitles=[
            SubtitleMeta(start_frame=s.start_frame, end_frame=s.end_frame, text=s.text)
            for s in sample.subtitles
        ],
        description=sample.description,
        frame_labels=_as_list(sample.frame_labels),
        sentence_labels=_as_list(sample.sentence_labels),
        replay_scores=_as_list(sample.replay_scores),
        user_summaries=[_as_list(s) for s in sample.user_summaries] if sample.user_summaries else None,
        annotator_scores=[_as_list(s) for s in sample.annotator_scores] if sample.annotator_scores else None,
    )
    labels_path = root / f"{base}.labels.json"
    labels_path.write_text(labels.model_dump_json(indent=2, exclude_none=True), encoding='utf-8')

    return ManifestEntry(
        video_id=sample.video_id,
        split=split,
        features=f"{base}.frames.hsum",
        labels=f"{base}.labels.json",
        text_features=text_relative,
        global_feature=global_relative,
        shots=list(sample.shots) if sample.shots is not None else None,
    )


def write_manifest(path, dims: ManifestDims, entries: Sequence[ManifestEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = ManifestDocument(dims=dims, entries=list(entries))
    path.write_text(document.model_dump_json(indent=2, exclude_none=True), encoding='utf-8')
    return path
