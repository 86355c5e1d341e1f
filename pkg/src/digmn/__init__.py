"""Dynamic intent guided meta network: intent mining, sequence encoders, and a
meta-predictor whose layer weights are attention-blended basis matrices."""

__version__ = "0.1.0"
