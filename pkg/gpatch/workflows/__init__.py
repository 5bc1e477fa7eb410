# -*- coding: utf-8 -*-
"""GPatch workflows"""

from .graph import *
from .walker import *
from .network import *
from .trainer import *
from .embedder import *
from .scoring import *
from .evaluator import *
from .dataio import *
