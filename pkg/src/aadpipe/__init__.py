"""aadpipe: EEG auditory-attention pipeline with attribution-guided channel selection.

Stage 1 trains a small CNN on alpha-power scalp images and ranks channels by
DeepSHAP importance; stage 2 trains a compact dilated temporal ConvNet on the
raw signals of the top-k channels only.
"""

__version__ = "0.1.0"
