"""GPatch: graph patching networks for cold-start recommendation."""

from os.path import dirname, join, abspath


__version__ = "0.1.0.dev"

DATADIR = join(dirname(abspath(__file__)), "data")

from .gpatch import *
