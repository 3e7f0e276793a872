"""Engagement-optimized response selection toolkit.

Pipeline: conversation logs -> pseudo-labeled response rows -> trained
engagement scorer -> best-of-N response selection, plus engagement metrics,
A/B statistics and a synthetic-user simulator.
"""

__version__ = "0.1.0"
