from contextlib import contextmanager

from django.core.management.base import CommandError

from summarization.exceptions import ConfigurationError, HierSumError, ManifestSchemaError

# Codes de sortie : 2 = usage / validation, 1 = erreur à l'exécution
USAGE_ERRORS = (ConfigurationError, ManifestSchemaError)


@contextmanager
def command_errors():
    """Traduit les erreurs métier en CommandError avec le code de sortie adapté"""
    try:
        yield
    except USAGE_ERRORS as exc:
        raise CommandError(str(exc), returncode=2) from exc
    except (HierSumError, OSError) as exc:
        raise CommandError(str(exc), returncode=1) from exc
