"""
Modèles Pydantic : schéma du manifest, étiquettes par vidéo et configurations
(réseau, pertes, entraînement, protocole d'évaluation, expérience complète).
"""
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


MANIFEST_FORMAT = 'hsum-manifest/1'

SPLIT_CHOICES = Literal['train', 'val', 'test']


# ---------------------------------------------------------------------------
# Manifest et étiquettes
# ---------------------------------------------------------------------------

class ManifestDims(BaseModel):
    """Dimensions des features, communes à toutes les entrées"""
    model_config = ConfigDict(extra='forbid')

    video: int = Field(..., ge=1, description="D_v, dimension des features image")
    text: int = Field(..., ge=1, description="D_t, dimension des features texte")


class ManifestEntry(BaseModel):
    """Une vidéo du jeu de données ; les chemins sont relatifs à la racine du manifest"""
    model_config = ConfigDict(extra='forbid')

    video_id: str = Field(..., min_length=1)
    split: SPLIT_CHOICES = Field(default='train')
    features: str = Field(..., description="Fichier HSUM [N x D_v] des features image")
    labels: str = Field(..., description="Document JSON VideoLabels")
    text_features: Optional[str] = Field(None, description="Fichier HSUM [M x D_t] des sous-titres")
    global_feature: Optional[str] = Field(None, description="Fichier HSUM [1 x D_t] de la description globale")
    shots: Optional[List[int]] = Field(
        None,
        description="Débuts de plans fournis par le dataset (prioritaires sur KTS)"
    )


class ManifestDocument(BaseModel):
    """Document JSON du manifest"""
    model_config = ConfigDict(extra='forbid')

    format: Literal['hsum-manifest/1'] = MANIFEST_FORMAT
    dims: ManifestDims
    entries: List[ManifestEntry] = Field(default_factory=list)


class SubtitleMeta(BaseModel):
    """Bornes temporelles d'un sous-titre (indices de frames, fin exclusive)"""
    model_config = ConfigDict(extra='forbid')

    start_frame: int = Field(..., ge=0)
    end_frame: int = Field(..., ge=1)
    text: Optional[str] = Field(None, description="Texte brut, utilisé pour ROUGE")


class VideoLabels(BaseModel):
    """Document JSON par vidéo : sous-titres, étiquettes et scores"""
    model_config = ConfigDict(extra='forbid')

    n_frames: int = Field(..., ge=1)
    subtitles: List[SubtitleMeta] = Field(default_factory=list)
    description: Optional[str] = Field(None, description="Texte de la description globale")
    frame_labels: Optional[List[int]] = None
    sentence_labels: Optional[List[int]] = None
    replay_scores: Optional[List[float]] = None
    user_summaries: Optional[List[List[int]]] = Field(
        None,
        description="Résumés binaires par annotateur (F1 multi-annotateurs)"
    )
    annotator_scores: Optional[List[List[float]]] = Field(
        None,
        description="Scores d'importance par annotateur (corrélations de rang)"
    )


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

class ModelConfig(BaseModel):
    """Configuration du réseau partagé F"""
    model_config = ConfigDict(extra='forbid')

    hidden_dim: int = Field(default=128, ge=1, description="D, dimension commune (512 pour la variante large)")
    n_layers: int = Field(default=2, ge=1)
    n_heads: int = Field(default=4, ge=1)
    ff_dim: Optional[int] = Field(None, ge=1, description="Largeur du feed-forward (défaut 4 x D)")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    video_dim: int = Field(..., ge=1, description="D_v")
    text_dim: int = Field(..., ge=1, description="D_t")
    max_frames: int = Field(default=1024, ge=1, description="Taille de la table de positions image")
    max_sentences: int = Field(default=256, ge=1, description="Taille de la table de positions texte")
    cross_modal_only: bool = Field(
        default=False,
        description="Sonde : bloque l'attention intra-modalité (hors diagonale et [CLS])"
    )

    @model_validator(mode='after')
    def _check_heads(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(
                f"hidden_dim={self.hidden_dim} n'est pas divisible par n_heads={self.n_heads}"
            )
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    @property
    def feedforward_dim(self) -> int:
        return self.ff_dim or 4 * self.hidden_dim


class LossWeights(BaseModel):
    """Pondérations de la perte totale et paramètres focal / contrastifs"""
    model_config = ConfigDict(extra='forbid')

    alpha_mse: float = Field(default=1.0, ge=0.0, description="Poids de la MSE sur les scores de relecture")
    beta: float = Field(default=0.1, ge=0.0, description="Poids du contrastif inter-échantillons")
    lambda_intra: float = Field(default=1.0, ge=0.0, description="Poids du contrastif intra-échantillon")
    focal_alpha: float = Field(default=0.25, gt=0.0, lt=1.0)
    focal_gamma: float = Field(default=2.0, ge=0.0)
    temperature: float = Field(default=0.07, gt=0.0)


class TrainConfig(BaseModel):
    """Protocole d'entraînement parent / enfant"""
    model_config = ConfigDict(extra='forbid')

    batch_size: int = Field(default=2, ge=1)
    epochs: int = Field(default=100, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    scheduler: Literal['cosine', 'none'] = 'cosine'
    warmup_epochs: int = Field(default=5, ge=0)
    global_step: int = Field(default=2, ge=0, description="G : un batch parent tous les G batchs (0 = jamais)")
    weights: LossWeights = Field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_dir: Path = Path('runs/default')
    weight_decay: float = Field(default=1e-4, ge=0.0)
    grad_clip: float = Field(default=1.0, gt=0.0)
    exclusion_window: int = Field(default=2, ge=0)
    hard_negative_top_k: Optional[int] = Field(None, ge=0, description="Défaut : nombre de positifs")
    parent_loss: Literal['full', 'video_only'] = Field(
        default='full',
        description="'video_only' restreint l'étape parent à L_cls_video"
    )
    parent_text_source: Literal['global', 'key_sentences'] = 'global'
    strict_parent: bool = Field(default=False, description="Erreur au lieu d'ignorer un échantillon parent sans texte global")
    replay_threshold: float = Field(default=0.15, ge=0.0, le=1.0)
    init_checkpoint: Optional[Path] = None


class EvalProtocol(BaseModel):
    """Protocole de sélection et de mesure"""
    model_config = ConfigDict(extra='forbid')

    summary_mode: Literal['knapsack', 'topk'] = 'knapsack'
    budget_ratio: float = Field(default=0.15, gt=0.0, le=1.0)
    fraction: Optional[float] = Field(
        None, gt=0.0, le=1.0,
        description="Fraction top-k ; None = fraction de positifs de la vérité terrain"
    )
    f1_aggregate: Literal['mean', 'max'] = 'mean'
    rank_scores: Literal['frame', 'replay'] = Field(
        default='frame', description="Scores classés par tau, rho et MAP : tête de classification ou de relecture"
    )
    map_rhos: List[float] = Field(default_factory=lambda: [0.5, 0.15])
    sentence_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    sentence_count: Optional[int] = Field(None, ge=0)
    kts_max_change_points: Optional[int] = Field(None, ge=0, description="Défaut : N // 5")
    kts_penalty: float = Field(default=1.0, ge=0.0)

    @model_validator(mode='after')
    def _check_rhos(self):
        for rho in self.map_rhos:
            if not 0.0 < rho <= 1.0:
                raise ValueError(f"map_rho hors de ]0, 1]: {rho}")
        return self


class ExperimentConfig(BaseModel):
    """
    Configuration plate d'une expérience : chaque clé correspond à un flag
    `--kebab-case` de la commande `train`.
    """
    model_config = ConfigDict(extra='forbid')

    manifest: Path = Field(..., description="Chemin du manifest JSON")
    checkpoint_dir: Path = Field(default=Path('runs/default'), description="Dossier des checkpoints et de l'historique")
    init_checkpoint: Optional[Path] = Field(None, description="Checkpoint de pré-entraînement à affiner")
    seed: int = Field(default=0, description="Graine globale")

    # Réseau
    hidden_dim: int = Field(default=128, ge=1, description="Dimension commune D")
    n_layers: int = Field(default=2, ge=1, description="Nombre de couches d'encodeur")
    n_heads: int = Field(default=4, ge=1, description="Nombre de têtes d'attention")
    ff_dim: Optional[int] = Field(None, ge=1, description="Largeur du feed-forward")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description="Dropout")
    max_frames: int = Field(default=1024, ge=1, description="Nombre max de frames")
    max_sentences: int = Field(default=256, ge=1, description="Nombre max de sous-titres")
    cross_modal_only: bool = Field(default=False, description="Sonde : attention inter-modalité uniquement")

    # Entraînement
    batch_size: int = Field(default=2, ge=1, description="Taille de batch B")
    epochs: int = Field(default=100, ge=1, description="Nombre d'époques")
    learning_rate: float = Field(default=1e-3, gt=0.0, description="Taux d'apprentissage de base")
    scheduler: Literal['cosine', 'none'] = Field(default='cosine', description="Planificateur du taux")
    warmup_epochs: int = Field(default=5, ge=0, description="Époques de warmup linéaire")
    global_step: int = Field(default=2, ge=0, description="Un batch parent tous les G batchs")
    weight_decay: float = Field(default=1e-4, ge=0.0, description="Weight decay découplé")
    grad_clip: float = Field(default=1.0, gt=0.0, description="Norme globale max du gradient")
    exclusion_window: int = Field(default=2, ge=0, description="Fenêtre d'exclusion autour des positifs")
    hard_negative_top_k: Optional[int] = Field(None, ge=0, description="Nombre de négatifs difficiles")
    parent_loss: Literal['full', 'video_only'] = Field(default='full', description="Composition de la perte parent")
    parent_text_source: Literal['global', 'key_sentences'] = Field(
        default='global', description="Texte de l'étape parent"
    )
    strict_parent: bool = Field(default=False, description="Échec si un échantillon parent n'a pas de texte global")
    replay_threshold: float = Field(default=0.15, ge=0.0, le=1.0, description="Seuil des étiquettes dérivées")

    # Pertes
    alpha_mse: float = Field(default=1.0, ge=0.0, description="Poids alpha de la MSE")
    beta: float = Field(default=0.1, ge=0.0, description="Poids beta du contrastif inter")
    lambda_intra: float = Field(default=1.0, ge=0.0, description="Poids lambda du contrastif intra")
    focal_alpha: float = Field(default=0.25, gt=0.0, lt=1.0, description="alpha de la focal loss")
    focal_gamma: float = Field(default=2.0, ge=0.0, description="gamma de la focal loss")
    temperature: float = Field(default=0.07, gt=0.0, description="Température des contrastifs")

    # Évaluation
    summary_mode: Literal['knapsack', 'topk'] = Field(default='knapsack', description="Mode de sélection")
    budget_ratio: float = Field(default=0.15, gt=0.0, le=1.0, description="Budget du sac à dos")
    fraction: Optional[float] = Field(None, gt=0.0, le=1.0, description="Fraction top-k")
    f1_aggregate: Literal['mean', 'max'] = Field(default='mean', description="Agrégation F1 multi-annotateurs")
    rank_scores: Literal['frame', 'replay'] = Field(default='frame', description="Tête utilisée pour tau, rho et MAP")
    map_rho: List[float] = Field(default_factory=lambda: [0.5, 0.15], description="Valeurs de rho pour MAP")
    sentence_threshold: float = Field(default=0.5, ge=0.0, le=1.0, description="Seuil des phrases clés")
    sentence_count: Optional[int] = Field(None, ge=0, description="Nombre fixe de phrases clés")
    kts_max_change_points: Optional[int] = Field(None, ge=0, description="Nombre max de ruptures KTS")
    kts_penalty: float = Field(default=1.0, ge=0.0, description="Pénalité KTS")

    @model_validator(mode='after')
    def _check_heads(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(
                f"hidden_dim={self.hidden_dim} n'est pas divisible par n_heads={self.n_heads}"
            )
        return self

    def to_model_config(self, video_dim: int, text_dim: int) -> ModelConfig:
        return ModelConfig(
            hidden_dim=self.hidden_dim,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            ff_dim=self.ff_dim,
            dropout=self.dropout,
            video_dim=video_dim,
            text_dim=text_dim,
            max_frames=self.max_frames,
            max_sentences=self.max_sentences,
            cross_modal_only=self.cross_modal_only,
        )

    def to_loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha_mse=self.alpha_mse,
            beta=self.beta,
            lambda_intra=self.lambda_intra,
            focal_alpha=self.focal_alpha,
            focal_gamma=self.focal_gamma,
            temperature=self.temperature,
        )

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            scheduler=self.scheduler,
            warmup_epochs=self.warmup_epochs,
            global_step=self.global_step,
            weights=self.to_loss_weights(),
            seed=self.seed,
            checkpoint_dir=self.checkpoint_dir,
            weight_decay=self.weight_decay,
            grad_clip=self.grad_clip,
            exclusion_window=self.exclusion_window,
            hard_negative_top_k=self.hard_negative_top_k,
            parent_loss=self.parent_loss,
            parent_text_source=self.parent_text_source,
            strict_parent=self.strict_parent,
            replay_threshold=self.replay_threshold,
            init_checkpoint=self.init_checkpoint,
        )

    def to_eval_protocol(self) -> EvalProtocol:
        return EvalProtocol(
            summary_mode=self.summary_mode,
            budget_ratio=self.budget_ratio,
            fraction=self.fraction,
            f1_aggregate=self.f1_aggregate,
            rank_scores=self.rank_scores,
            map_rhos=list(self.map_rho),
            sentence_threshold=self.sentence_threshold,
            sentence_count=self.sentence_count,
            kts_max_change_points=self.kts_max_change_points,
            kts_penalty=self.kts_penalty,
        )
