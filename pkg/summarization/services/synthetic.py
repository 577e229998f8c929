"""
Génération de vidéos pédagogiques synthétiques pour l'entraînement à petite échelle.

Chaque vidéo est une suite d'étapes ; chaque étape a un vecteur latent propre.
Les frames valent latent + bruit, chaque étape émet un sous-titre dont la
feature est une projection linéaire fixe du latent + bruit, et une partie des
étapes est "importante" (étiquettes à 1, scores de relecture >= 0.5).
À l'intérieur de chaque bande, le score de relecture croît avec la projection
de la frame sur une direction fixe : il se lit dans les features.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from ..exceptions import ConfigurationError
from .dataset import (
    DatasetManifest,
    SubtitleSegment,
    VideoSample,
    load_manifest,
    replay_to_labels,
    write_manifest,
    write_sample,
)
from .pydantic_models import ManifestDims

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'

STEP_VERBS = [
    'cut', 'mix', 'pour', 'heat', 'fold', 'stir', 'press', 'slice',
    'wrap', 'rinse', 'shake', 'bake', 'glue', 'sand', 'paint', 'tie',
]
STEP_OBJECTS = [
    'dough', 'paper', 'board', 'cable', 'fabric', 'sauce', 'frame', 'card',
    'screw', 'pot', 'rope', 'lid', 'brush', 'tile', 'seed', 'wire',
]

# Amplitude de base de la direction cachée partagée par les étapes importantes
IMPORTANCE_AMPLITUDE = 0.5


def _step_phrase(rng: np.random.Generator) -> str:
    verb = STEP_VERBS[rng.integers(len(STEP_VERBS))]
    obj = STEP_OBJECTS[rng.integers(len(STEP_OBJECTS))]
    tool = STEP_OBJECTS[rng.integers(len(STEP_OBJECTS))]
    return f"{verb} the {obj} with the {tool}"


def _unit_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    values = rng.standard_normal((rows, dim))
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def synth_generate(
    out_dir,
    seed: int,
    n_videos: int,
    steps_per_video: int,
    frames_per_step: int,
    video_dim: int,
    text_dim: int,
    important_steps: Optional[int] = None,
    noise: float = 0.1,
    importance_signal: float = 1.0,
    replay_spread: float = 0.5,
    n_step_types: Optional[int] = None,
    val_fraction: float = 0.0,
    test_fraction: float = 0.0,
) -> DatasetManifest:
    """
    Écrit un jeu synthétique déterministe sous out_dir et retourne son manifest.

    Les frames des étapes importantes ont un score de relecture dans [0.5, 1],
    les autres dans [0, 0.1[, croissants avec la projection de la frame sur
    la direction de relecture ; replay_spread règle l'étalement des frames le
    long de cette direction. La description globale est la moyenne des latents
    importants projetée en D_t.
    """
    counts = {
        'n_videos': n_videos,
        'steps_per_video': steps_per_video,
        'frames_per_step': frames_per_step,
        'video_dim': video_dim,
        'text_dim': text_dim,
    }
    for name, value in counts.items():
        if value < 1:
            raise ConfigurationError(f"{name} doit être >= 1 (reçu {value})")
    if important_steps is None:
        important_steps = max(1, steps_per_video // 2)
    if not 0 <= important_steps <= steps_per_video:
        raise ConfigurationError(
            f"important_steps={important_steps} hors de [0, {steps_per_video}]"
        )
    if noise < 0 or importance_signal < 0 or replay_spread < 0:
        raise ConfigurationError("noise, importance_signal et replay_spread doivent être positifs")
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ConfigurationError("val_fraction + test_fraction doit être dans [0, 1[")
    n_step_types = n_step_types or max(2 * steps_per_video, 8)
    if n_step_types < steps_per_video:
        raise ConfigurationError("n_step_types doit être >= steps_per_video")

    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)

    # Tirages partagés par tout le jeu de données
    text_map = rng.standard_normal((video_dim, text_dim)) / np.sqrt(video_dim)
    importance_direction = _unit_rows(rng, 1, video_dim)[0]
    step_pool = _unit_rows(rng, n_step_types, video_dim)
    step_texts = [_step_phrase(rng) for _ in range(n_step_types)]
    replay_direction = _unit_rows(rng, 1, video_dim)[0]

    order = rng.permutation(n_videos)
    n_test = int(round(test_fraction * n_videos))
    n_val = int(round(val_fraction * n_videos))
    split_of = {}
    for rank, index in enumerate(order):
        if rank < n_test:
            split_of[int(index)] = 'test'
        elif rank < n_test + n_val:
            split_of[int(index)] = 'val'
        else:
            split_of[int(index)] = 'train'

    element_noise = noise / np.sqrt(video_dim)
    text_noise = noise / np.sqrt(text_dim)
    n_frames = steps_per_video * frames_per_step

    entries = []
    for index in range(n_videos):
        types = rng.choice(n_step_types, size=steps_per_video, replace=False)
        important = np.zeros(steps_per_video, dtype=bool)
        important[rng.choice(steps_per_video, size=important_steps, replace=False)] = True

        latents = step_pool[types].copy()
        latents[important] += importance_signal * IMPORTANCE_AMPLITUDE * importance_direction

        frames = np.repeat(latents, frames_per_step, axis=0)
        frames = frames + element_noise * rng.standard_normal(frames.shape)
        spread = rng.standard_normal(n_frames)
        frames = frames + (replay_spread / np.sqrt(video_dim)) * np.outer(spread, replay_direction)
        text_features = latents @ text_map + text_noise * rng.standard_normal((steps_per_video, text_dim))

        frame_important = np.repeat(important, frames_per_step)
        # Projection ramenée à une variance proche de 1, puis quantile gaussien
        projection = np.sqrt(video_dim) * (frames @ replay_direction) / np.sqrt(1.0 + replay_spread ** 2)
        quantile = np.clip(stats.norm.cdf(projection), 0.0, 1.0 - 1e-6)
        replay = np.where(frame_important, 0.5 + 0.5 * quantile, 0.1 * quantile)

        subtitles = [
            SubtitleSegment(
                text_feature=text_features[step].astype(np.float32),
                start_frame=step * frames_per_step,
                end_frame=(step + 1) * frames_per_step,
                text=step_texts[types[step]],
            )
            for step in range(steps_per_video)
        ]

        global_feature = None
        description = None
        if important.any():
            global_feature = (latents[important].mean(axis=0) @ text_map).astype(np.float32)
            description = '. '.join(step_texts[t] for t in types[important])

        sample = VideoSample(
            video_id=f"synth-{seed}-{index:04d}",
            frame_features=frames.astype(np.float32),
            subtitles=subtitles,
            global_feature=global_feature,
            frame_labels=replay_to_labels(replay),
            sentence_labels=important.astype(np.int64),
            replay_scores=replay,
            description=description,
        )
        entries.append(write_sample(out_dir, sample, split=split_of[index]))

    manifest_path = write_manifest(
        out_dir / MANIFEST_NAME,
        ManifestDims(video=video_dim, text=text_dim),
        entries,
    )
    logger.info(
        "[Synth] %d vidéos générées (seed=%d, N=%d, M=%d) dans %s",
        n_videos, seed, n_frames, steps_per_video, out_dir,
    )
    return load_manifest(manifest_path)
