#!/usr/bin/env python3
"""Stdio launcher for MCP Inspector.

This script runs the adaptive augmentation FastMCP server with stdio
transport, which is required for the MCP Inspector to connect and test it.

Usage:
    npx @modelcontextprotocol/inspector python run_stdio.py
"""

import sys
import os
from pathlib import Path
from dotenv import load_dotenv

# Add parent directory to path to import fastmcp_server
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Load environment variables from .env file
env_path = Path(__file__).parent.parent / ".env"
if env_path.exists():
    load_dotenv(env_path)
    print(f"Loaded environment variables from {env_path}", file=sys.stderr)

from fastmcp_server.augpolicy import create_server


def main():
    """Run the FastMCP server with stdio transport."""
    create_server().run(transport="stdio")


if __name__ == "__main__":
    main()
