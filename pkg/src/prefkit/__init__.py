"""prefkit: a desk-scale lab for contrastive post-training of tiny LMs."""

__version__ = "0.1.0"
