"""Puts the repository root on sys.path so tests import func, data and ProjBEngine directly."""
