"""``python -m fastmcp_server`` runs the augpolicy command line."""

import sys
from pathlib import Path

from dotenv import load_dotenv

env_path = Path(__file__).parent.parent / ".env"
if env_path.exists():
    load_dotenv(env_path)

from fastmcp_server.augpolicy.cli import main

if __name__ == "__main__":
    sys.exit(main())
