"""Shape analysis of left-ventricular endocardial surfaces: meshing, 17-segment
partitioning, point descriptors, Bag-of-Features histograms and classifiers."""

__version__ = "0.1.0"
