# -*- coding: utf-8 -*-
#
# intruder documentation build configuration file
#
# This file is execfile()d with the current directory set to its containing dir.

import sys, os
sys.path.insert(0, os.path.abspath('../src'))

from intruder import __version__ as sw_version

# -- General configuration -----------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.todo', 'sphinx.ext.coverage', 'sphinx.ext.viewcode',
              'sphinx.ext.mathjax']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'intruder - spectral diffing of fine-tuned checkpoints'
copyright = '2026, the intruder developers'

# The short X.Y version.
version = sw_version.split('-')[0]
# The full version, including alpha/beta/rc tags.
release = version

today_fmt = '%Y-%m-%d'
exclude_patterns = ['_build']
pygments_style = 'sphinx'

# -- Options for HTML output ---------------------------------------------------

html_theme = 'alabaster'
html_last_updated_fmt = '%Y-%m-%d'
html_use_index = False
html_show_sourcelink = False
htmlhelp_basename = 'intruderdoc'

# -- Options for manual page output --------------------------------------------

man_pages = [
    ('usage', 'intruder',
     'count, trace and rescale intruder dimensions of fine-tuned checkpoints',
     ['the intruder developers'],
     1),
]
