__version__ = "0.1.0"
from .helper import Helper
from .optimization import get_optimizer
from .config import RunConfig
from .scattering import Scattering, ScatteringConfig
from .degradation import DegradationModel
from .inference import GibbsModel, super_resolve, synthesize
from .finetune import finetune
