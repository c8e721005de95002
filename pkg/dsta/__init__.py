from . import algorithms
from . import consensus
from . import core
from . import errors
from . import experiments
from . import utility
from . import utils

from .errors import *
from .core import *
from .utility import *
from .algorithms import *
from .consensus import *
from .experiments import CampaignConfig
from .experiments import CampaignResult
from .experiments import CellSummary
from .experiments import GuaranteeReport
from .experiments import check_campaign
from .experiments import run_campaign
from .experiments import sweep_p
from .experiments import verify_guarantee
from .utils import *
