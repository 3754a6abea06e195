import sys

from tofloc.cli import main

sys.exit(main())
