import sys

from .benchcli.cli import main

sys.exit(main())
