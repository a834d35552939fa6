# -*- coding: utf-8 -*-
#
# Sphinx configuration for the quantum-kalman-magnetometry documentation.

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(os.path.dirname(__file__))))

import kalman_magnetometry  # noqa: E402

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode']
source_suffix = '.rst'
master_doc = 'index'

project = 'Quantum Kalman Magnetometry'
copyright = '2026, the quantum-kalman-magnetometry developers'
version = kalman_magnetometry.__version__
release = version

exclude_patterns = ['_build']
pygments_style = 'sphinx'
html_theme = 'default'
htmlhelp_basename = 'quantum-kalman-magnetometrydoc'

_title = 'Quantum Kalman Magnetometry Documentation'
_authors = 'quantum-kalman-magnetometry developers'

latex_documents = [
    ('index', 'quantum-kalman-magnetometry.tex', _title, _authors, 'manual'),
]
man_pages = [
    ('index', 'quantum-kalman-magnetometry', _title, [_authors], 1),
]
texinfo_documents = [
    ('index', 'quantum-kalman-magnetometry', _title, _authors, 'quantum-kalman-magnetometry',
     'Kalman-filter magnetometry.', 'Miscellaneous'),
]
