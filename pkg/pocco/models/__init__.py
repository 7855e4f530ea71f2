from .instance import *
from .env import *
from .weights import *
from .pareto import *
from .trajectory import *
