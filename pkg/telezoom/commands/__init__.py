# -*- coding: utf-8 -*-
"""
Command Registration
Registers all sub-commands on the CLI parser
"""

import logging

logger = logging.getLogger(__name__)


def register_commands(subparsers):
    """
    Register every sub-command on the argparse sub-parser group
    Import command modules here to avoid circular imports
    """
    try:
        from telezoom.commands import evaluate, generate, impute, sweep, train

        for module in (generate, train, impute, evaluate, sweep):
            module.register(subparsers)

        logger.debug("✅ All commands registered")

    except Exception as e:
        logger.error(f"❌ Failed to register commands: {e}", exc_info=True)
        raise


__all__ = ['register_commands']
