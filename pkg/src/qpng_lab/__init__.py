"""Numerical laboratory for the q-deformed polynuclear growth model.

Submodules: ``specialfn``, ``partitions``, ``distributions``, ``qpng_sim``,
``plancherel``, ``fredholm``, ``ratefn``, ``ode``, ``validation`` and ``cli``.
"""

__version__ = "0.1.0"
