# Sphinx configuration for the lockweaver documentation.

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx_tabs.tabs',
    'numpydoc',
]

source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = []

project = 'lockweaver'
copyright = '2026, The lockweaver developers'
author = 'The lockweaver developers'
version = '0.1'
release = '0.1'

pygments_style = 'sphinx'
html_theme = 'alabaster'

# Class members are documented by the autoclass directives themselves
numpydoc_show_inherited_class_members = False
numpydoc_show_class_members = False
