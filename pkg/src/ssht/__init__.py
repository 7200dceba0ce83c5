"""Semi-supervised adaptation of a source-trained classifier to a shifted
target domain, using a few labeled target samples, many unlabeled ones,
confidence-thresholded consistency training, and batch nuclear-norm
maximization. Pure numpy, no autodiff framework.
"""

__version__ = "0.1.0"
