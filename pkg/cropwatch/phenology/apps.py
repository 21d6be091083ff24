from django.apps import AppConfig


class PhenologyConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'phenology'
