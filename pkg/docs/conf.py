# Sphinx configuration of the fabsim docs.

import os
import sys

sys.path.insert(0, os.path.abspath(".."))

from fabsim import __version__  # noqa: E402

project = "fabsim"
copyright = "2026, The fabsim Authors"
author = "The fabsim Authors"
version = ".".join(__version__.split(".")[:-1])
release = __version__

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.intersphinx",
    "sphinx.ext.napoleon",
    "sphinx_autodoc_typehints",
]
master_doc = "index"
exclude_patterns = ["_build"]
default_role = "py:obj"
autodoc_member_order = "bysource"

html_theme = "sphinx_rtd_theme"

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
    "pydantic": ("https://docs.pydantic.dev/latest/", None),
}
