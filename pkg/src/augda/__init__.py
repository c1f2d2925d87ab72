"""Multi-source domain adaptation with augmented DAGs and latent-variable generators."""

__version__ = "0.1.0"
