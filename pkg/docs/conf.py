# -*- coding: utf-8 -*-
#
# shaqlab documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import sphinx_rtd_theme

### The package is installed in a virtualenv to build docs
# sys.path.insert(0, os.path.abspath('../'))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.coverage',
    'sphinx.ext.imgmath',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',
]
napoleon_google_docstring = False
napoleon_numpy_docstring = True

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'shaqlab'
copyright = u'2026, shaqlab developers'
author = u'shaqlab developers'

# The short X.Y version.
version = u'0.1'
# The full version, including alpha/beta/rc tags.
release = u'0.1.0'

language = 'en'
exclude_patterns = ['_build']
pygments_style = 'sphinx'

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
htmlhelp_basename = 'shaqlabdoc'

# -- Options for LaTeX output ---------------------------------------------

latex_documents = [
    (master_doc, 'shaqlab.tex', u'shaqlab Documentation', u'shaqlab developers', 'manual'),
]

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'shaqlab', u'shaqlab Documentation', [author], 1)
]
