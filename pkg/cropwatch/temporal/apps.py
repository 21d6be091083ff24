from django.apps import AppConfig


class TemporalConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'temporal'
