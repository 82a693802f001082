from .bench import Bench, AsyncBench
from .models import *
from .exceptions import *

__all__ = ["Bench", "AsyncBench"]
