"""
oneshot-fedseg - One-shot federated segmentation distillation

Clients train query-based segmentation models on private synthetic domains
and upload their weights once; the server scores cross-client prediction
inconsistency, augments unstable classes and distills all clients into one
global model without labels.
"""

__version__ = "0.2.0"
