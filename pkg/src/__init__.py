from . import lang
from . import logic
from . import parse
from . import proof
from . import synth
from . import lin
from . import mc
from . import report
