"""Tests for infrastructure stuff."""

import io
import logging
import os
import re
import unittest

from unittest.mock import patch

from django.conf import settings
from flake8.api.legacy import get_style_guide

# the project package, the project tests and every installed app
FLAKE8_ROOTS = ['deskformer', 'tests'] + [app.split('.')[0] for app in settings.INSTALLED_APPS]
FLAKE8_OPTIONS = ['--max-line-length=99', '--select=E,W,F,C,N']

# leftovers of a debugging session (ipdb is in the dev requirements)
DEBUG_CALLS = re.compile(r'^\s*(import ipdb|from ipdb|ipdb\.set_trace|breakpoint\(\))', re.M)

# avoid seeing all DEBUG logs if the test fails
for logger_name in ('flake8.plugins', 'flake8.api', 'flake8.checker', 'flake8.main'):
    logging.getLogger(logger_name).setLevel(logging.CRITICAL)


class InfrastructureTestCase(unittest.TestCase):

    def _get_python_filepaths(self):
        """Helper to retrieve paths of Python files."""
        python_paths = []
        for root in FLAKE8_ROOTS:
            for dirpath, dirnames, filenames in os.walk(root):
                for filename in filenames:
                    if filename.endswith(".py"):
                        python_paths.append(os.path.join(dirpath, filename))
        return python_paths

    def test_flake8(self):
        python_filepaths = self._get_python_filepaths()
        style_guide = get_style_guide(paths=FLAKE8_OPTIONS)
        fake_stdout = io.StringIO()
        with patch('sys.stdout', fake_stdout):
            report = style_guide.check_files(python_filepaths)
        self.assertEqual(report.total_errors, 0, "There are issues!\n" + fake_stdout.getvalue())

    def test_no_debugger_calls(self):
        offenders = []
        for path in self._get_python_filepaths():
            with open(path, encoding='utf-8') as fh:
                if DEBUG_CALLS.search(fh.read()):
                    offenders.append(path)
        self.assertEqual(offenders, [])

    def test_every_app_has_tests(self):
        apps = [app.split('.')[0] for app in settings.INSTALLED_APPS]
        missing = [app for app in apps if not os.path.exists(os.path.join(app, 'tests.py'))]
        self.assertEqual(missing, [])
