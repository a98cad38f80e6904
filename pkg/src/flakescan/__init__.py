"""Desk-scale automated flake-search pipeline.

Library layout:

- ``core``      geometric and categorical primitives (masks, boxes, RLE, taxonomy)
- ``metrics``   detection evaluation (IoU, matching, AP/mAP, per-image confusion)
- ``losses``    reference multitask loss formulas
- ``dataset``   COCO-compatible annotation toolchain, splits, stats, training plan
- ``augment``   on-line augmentation and model-input normalization
- ``ruledet``   rule-based baseline detector (contrast windows + blobs)
- ``synthcam``  synthetic chip scenes, tile renderer, virtual stage
- ``protocol``  inference server/client wire protocol and reference backends
- ``scanner``   tile planning, scan orchestration, dedupe
- ``catalog``   persistent flake database and HTTP API
"""

__version__ = "0.1.0"
