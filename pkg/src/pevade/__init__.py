"""pevade: adversarial evasion toolkit for byte-based PE malware detectors.

Parse and rewrite PE files without breaking them, train desk-scale byte
classifiers, and drive gradient-based or query-only attacks whose outputs
are certified functionality-preserving by structural checks instead of a
sandbox.
"""

from . import blackbox, campaign, corpus, equivalence, manipulations, models, pe, whitebox
from .blackbox import GammaConfig, GeneticConfig, QueryScorer
from .equivalence import structural_equivalence
from .manipulations import EditMask, ManipulationKind, ManipulationVector
from .models import Classifier
from .whitebox import AttackTrace, WhiteboxConfig

__version__ = "0.1.0"

__all__ = [
    "AttackTrace",
    "Classifier",
    "EditMask",
    "GammaConfig",
    "GeneticConfig",
    "ManipulationKind",
    "ManipulationVector",
    "QueryScorer",
    "WhiteboxConfig",
    "blackbox",
    "campaign",
    "corpus",
    "equivalence",
    "manipulations",
    "models",
    "pe",
    "structural_equivalence",
    "whitebox",
]
