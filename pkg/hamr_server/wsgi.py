"""
WSGI config for the hamr_server project.

Serves the monitoring API (agent sessions, alignment reports and evaluation
results). The map-fusion server itself is started with
``python manage.py serve``.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'hamr_server.settings')

application = get_wsgi_application()
