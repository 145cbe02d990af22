#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# asdl documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.
import copy
from os.path import abspath, dirname
import sys
path = dirname(dirname(abspath(__file__)))
sys.path.append(path)
import asdl  # noqa: E402

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',
    'sphinx_rtd_theme',
]

# -- Monkey-patch docstring to not auto-link :ivars ------------------------
from sphinx.domains.python import PythonDomain  # noqa: E402
old_resolve_xref = copy.deepcopy(PythonDomain.resolve_xref)


def new_resolve_xref(*args):
    if '.' not in args[5]:  # target
        return None
    return old_resolve_xref(*args)


PythonDomain.resolve_xref = new_resolve_xref

# -- Napoleon Settings -----------------------------------------------------
napoleon_google_docstring = True
napoleon_numpy_docstring = False
napoleon_include_init_with_doc = False
napoleon_include_private_with_doc = False
napoleon_include_special_with_doc = False
napoleon_use_ivar = True
napoleon_use_param = True
napoleon_use_rtype = True
napoleon_use_keyword = True
autodoc_member_order = 'bysource'
# API pages build without the numerical stack installed
autodoc_mock_imports = ['torch', 'librosa', 'soundfile', 'matplotlib']

# -- General Configuration ------------------------------------------------
templates_path = ['../']
master_doc = 'index'
project = 'asdl'
copyright = '2026, asdl contributors'
author = 'asdl contributors'
version = asdl.VERSION
release = asdl.VERSION
language = 'en'
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store', 'toc.rst']
pygments_style = 'sphinx'
todo_include_todos = False

# -- Options for HTML output ----------------------------------------------
html_theme = 'sphinx_rtd_theme'
html_theme_options = {
    'collapse_navigation': False,
}
htmlhelp_basename = 'asdldoc'
suppress_warnings = ['image.nonlocal_uri']
