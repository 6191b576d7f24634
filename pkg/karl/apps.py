from django.apps import AppConfig


class KarlConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'karl'
    verbose_name = 'KARL adaptive tokenizer'
