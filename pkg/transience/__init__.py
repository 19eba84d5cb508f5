# Copyright (c) 2026, Transience contributors
# For license information, please see license.txt

"""Alignment of non-parallel multi-view time series.

Both views are projected into a shared latent space by small feed-forward
networks (or, for the CTW baseline, by linear CCA) and aligned there with
dynamic time warping; the two phases alternate until the warping paths settle.
"""

__version__ = "0.1.0"
