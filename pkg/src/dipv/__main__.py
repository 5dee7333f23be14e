import sys

from dipv.cli import main

sys.exit(main())
