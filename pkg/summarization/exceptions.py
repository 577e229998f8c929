"""
Erreurs métier du résumé vidéo hiérarchique.

Chaque erreur hérite aussi de l'exception builtin la plus proche pour que
l'appelant puisse attraper l'une ou l'autre.
"""


class HierSumError(Exception):
    """Erreur de base du projet"""


class ManifestError(HierSumError, ValueError):
    """Manifest invalide"""


class ManifestFileNotFoundError(HierSumError, FileNotFoundError):
    """Fichier manifest ou fichier référencé introuvable"""

    def __init__(self, path, video_id=None):
        self.path = str(path)
        self.video_id = video_id
        if video_id:
            message = f"Fichier introuvable pour '{video_id}': {self.path}"
        else:
            message = f"Fichier introuvable: {self.path}"
        super().__init__(message)


class ManifestSchemaError(ManifestError):
    """Le document ne respecte pas le schéma du manifest"""


class DuplicateVideoIdError(ManifestError):
    def __init__(self, video_id):
        self.video_id = video_id
        super().__init__(f"video_id dupliqué dans le manifest: '{video_id}'")


class UnknownVideoError(HierSumError, KeyError):
    def __init__(self, video_id):
        self.video_id = video_id
        super().__init__(f"video_id inconnu: '{video_id}'")

    def __str__(self):
        return self.args[0]


class DimensionMismatchError(HierSumError, ValueError):
    """Dimension de features incohérente avec le manifest ou le checkpoint"""


class SampleInvariantError(HierSumError, ValueError):
    """Un VideoSample viole un de ses invariants"""


class ReplayScoreRangeError(HierSumError, ValueError):
    """Score de relecture hors de [0, 1]"""


class FeatureFileError(HierSumError, ValueError):
    """Fichier binaire de features corrompu (magic, taille)"""


class ConfigurationError(HierSumError, ValueError):
    """Configuration d'expérience invalide"""


class MissingGlobalFeatureError(HierSumError, ValueError):
    """Étape parent sans description globale utilisable"""


class NonFiniteLossError(HierSumError, ArithmeticError):
    """Perte NaN/inf pendant l'entraînement"""

    def __init__(self, step, breakdown):
        self.step = step
        self.breakdown = breakdown
        super().__init__(f"Perte non finie au batch {step}: {breakdown}")


class CheckpointError(HierSumError, ValueError):
    """Archive de checkpoint illisible ou incompatible"""
