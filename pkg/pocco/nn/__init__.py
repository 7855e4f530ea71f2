from .layers import *
from .policy import *
from .checkpoint import *
