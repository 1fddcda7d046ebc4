"""Two-stage cascaded channel estimation for reflecting-surface MIMO.

Stage one factorizes the received block into the surface-to-receiver
channel and a sparse intermediate matrix with BiG-AMP; stage two completes
that matrix under a rank constraint and recovers the base-station-to-surface
channel from the pilots.
"""

from .bigamp import BigAmpOptions, FactorizationResult, Priors
from .completion import CompletionOptions, CompletionProblem, recover_H, run_rgrad
from .config import PipelineOptions, load_config
from .evaluation import TrialResult, nmse
from .harness import SweepSpec, run_sweep, run_trial
from .model import SystemConfig

__version__ = "0.1.0"
