from django.apps import AppConfig


class FusionAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'fusion'
    verbose_name = 'Multi-agent map fusion'
