"""
ASGI config for the hamr_server project.

It exposes the ASGI callable as a module-level variable named ``application``.
The monitoring API can run next to the fusion server under any ASGI host.
"""

import os

from django.core.asgi import get_asgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'hamr_server.settings')

application = get_asgi_application()
