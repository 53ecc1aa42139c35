"""Pytest wiring that mirrors `./manage.py test` (settings, configuration and cwd)."""

import os

import configurations

HERE = os.path.dirname(os.path.abspath(__file__))

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'deskformer.settings')
os.environ.setdefault('DJANGO_CONFIGURATION', 'Test')
os.chdir(HERE)
configurations.setup()
