# -*- coding: utf-8 -*-
"""Exceptions raised by gpatch."""

__all__ = ["DataError", "NumericError"]


class DataError(ValueError):
    """Malformed, missing or inconsistent input data."""


class NumericError(FloatingPointError):
    """Non-finite loss, score or gradient during optimization.

    Parameters
    ----------
    message : str
        Diagnostic message.
    last_good : object, optional
        Last parameters known to produce finite values, if any.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
