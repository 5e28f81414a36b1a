"""
Buffered particle stochastic gradients and SGLD for state space models.
"""
from loguru import logger

__version__ = "0.1.0"

# library code stays silent until a front end calls configure_logging
logger.disable("pfsgld")
