from .tensor import *
from .optim import *
from .gradcheck import *
