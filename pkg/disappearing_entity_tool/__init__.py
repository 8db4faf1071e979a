"""
Disappearing Entity Tool - Time-sensitive distant supervision, refined word
embeddings and a CRF tagger for finding entities that are about to disappear
from timestamped microblog streams.
"""

__version__ = "0.1.0"
