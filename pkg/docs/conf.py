# Configuration file for the Sphinx documentation builder.
#
# For the full list of built-in configuration values, see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

from datetime import datetime

pygments_style = "solarized-light"

# -- Project information -----------------------------------------------------

project = "graphdistill"
copyright = f"{datetime.now().year}, graphdistill contributors"
author = "graphdistill contributors"

# -- General configuration ---------------------------------------------------

extensions = []

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]


# -- Options for HTML output -------------------------------------------------

html_theme = "alabaster"

html_theme_options = {
    "logo_name": "graphdistill",
    "description": "Auxiliary network-metric tasks for graph learning",
    "fixed_sidebar": True,
}
