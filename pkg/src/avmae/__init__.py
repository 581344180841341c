"""Audiovisual masked autoencoder pretraining and finetuning at desk scale."""

__version__ = "0.1.0"
