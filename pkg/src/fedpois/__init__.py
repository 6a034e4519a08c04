"""Federated-learning backdoor simulator built on numpy.

Modules: :mod:`~fedpois.data`, :mod:`~fedpois.model`, :mod:`~fedpois.attacks`,
:mod:`~fedpois.defense`, :mod:`~fedpois.engine`, :mod:`~fedpois.theory`,
:mod:`~fedpois.metrics`, :mod:`~fedpois.config` and :mod:`~fedpois.cli`.
"""

__version__ = "0.1.0"
