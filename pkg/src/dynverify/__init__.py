"""Dynamic verification of quantized classifiers with small checker networks.

The task model runs as usual; a width-scaled checker distilled from it labels
the same input, and a label mismatch triggers a re-computation. The modules
cover INT-8 inference, fault campaigns, checker design and orchestration.
"""

__version__ = "0.1.0"
