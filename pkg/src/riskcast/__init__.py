"""riskcast: joint multi-agent trajectory prediction with driving-intention
classification and risk-ethics trajectory ranking, on synthetic scenes."""

__version__ = "0.1.0"

from .geometry import AgentState, RelEncoding, relative_encoding  # noqa: F401
from .intention import IntentionDistribution, JointPrediction  # noqa: F401
from .model import JointPredictor, ModelConfig  # noqa: F401
from .risk import RiskConfig, RiskReport, rank_trajectories  # noqa: F401
from .scene import Scenario, generate_scenario, load_scenario  # noqa: F401
from .training import TrainConfig, train  # noqa: F401
