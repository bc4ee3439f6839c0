# -*- coding: utf-8 -*-
#
# Configuration file for the Sphinx documentation builder.
# http://www.sphinx-doc.org/en/master/config

# -- Path setup --------------------------------------------------------------
import os
import sys

sys.path.insert(0, os.path.abspath("../.."))

# -- Project information -----------------------------------------------------

project = "yoloret"
copyright = "2021, yoloret developers"
author = "yoloret developers"
version = "0.1"
release = "0.1.0"

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.napoleon",
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "m2r",  # Markdown to rst converter
]

templates_path = ["_templates"]
source_suffix = [".rst", ".md"]
master_doc = "index"
language = None
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = "sphinx"

# numba is optional at runtime
autodoc_mock_imports = ["numba"]

# -- Options for HTML output -------------------------------------------------

html_theme = "sphinx_rtd_theme"
html_static_path = ["_static"]
htmlhelp_basename = "yoloretdoc"

# -- Options for LaTeX / manual page output ----------------------------------

latex_documents = [
    (master_doc, "yoloret.tex", "yoloret Documentation", author, "manual"),
]
man_pages = [(master_doc, "yoloret", "yoloret Documentation", [author], 1)]
