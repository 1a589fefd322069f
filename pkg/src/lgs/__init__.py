"""Learning one-parameter Lie group symmetries of image pairs.

The main entry points are :func:`lgs.data.make_pairs` to build a dataset,
:func:`lgs.models.train_naive` / :func:`lgs.models.train_latent` to fit,
and :mod:`lgs.analysis` to score the result.
"""

__version__ = "0.1.0"
