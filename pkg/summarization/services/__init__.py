# Services pour l'entraînement et l'évaluation du résumé vidéo hiérarchique

