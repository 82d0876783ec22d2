"""Bundled toy datasets and oracle records; see :mod:`weightedu.toydata`."""
