"""FastMCP entrypoint for the adaptive augmentation MCP server."""

import logging
from pathlib import Path
from dotenv import load_dotenv

logger = logging.getLogger("augpolicy.mcp")

# Load environment variables from .env file in the repository root
env_path = Path(__file__).parent.parent / ".env"
if env_path.exists():
    load_dotenv(env_path)
    logger.info(f"Loaded environment variables from {env_path}")
else:
    logger.info(f"No .env file found at {env_path}")
    logger.info("   Set AUGPOLICY_DATA_DIR to use CIFAR-10; synthetic data needs no setup")

from fastmcp_server.augpolicy import create_server

mcp = create_server()
logger.info("Registered 8 tools: bounded_reward, queue_distribution, sample_subpolicies, pretrain, probe, inspect, get_metrics, health_check")


if __name__ == "__main__":
    mcp.run(transport="http", port=3054)
