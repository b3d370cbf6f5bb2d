"""Thermodynamic-formalism toolbox for derived-from-Anosov maps of T^4.

Subpackages follow the pipeline: torus geometry -> linear model -> deformed
map -> partition sums / pressure -> orbit decomposition -> plane dynamics ->
uniqueness criterion, with a batch CLI on top.
"""

__version__ = "0.1.0"
