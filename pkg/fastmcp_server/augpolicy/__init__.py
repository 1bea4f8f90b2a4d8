"""Adaptive augmentation policy search for contrastive learning."""

from .tools import create_server, register_augpolicy_tools

__all__ = [
    "create_server",
    "register_augpolicy_tools",
]
