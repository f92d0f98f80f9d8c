"""csclog: component-subsequence correlation-aware log anomaly detection.

Pipeline: raw logs -> sessions -> mined templates -> semantic/temporal
features -> next-template predictor with a learned subsequence-correlation
graph -> top-k / count-threshold anomaly verdicts -> metric reports.
"""

__version__ = "0.1.0"

# Reserved template ids. Real templates use dense ids >= 0.
UNSEEN_TEMPLATE_ID = -1  # frozen store saw no match; always flags its window
PAD_TEMPLATE_ID = -2  # left-padding for sessions shorter than the window
PAD_COMPONENT = "<pad>"
