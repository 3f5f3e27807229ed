"""datscore: an image/genotype dementia-scoring pipeline.

Genotype ingestion and QC, MRI-volume harmonization, longitudinal cohort
stratification, sub-bagged statistical feature selection, multi-kernel
probabilistic ensemble training, out-of-bag DAT-score computation, and
stratified evaluation. Runs end to end on synthetic cohorts.
"""

__version__ = "0.1.0"
