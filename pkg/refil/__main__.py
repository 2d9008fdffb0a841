import sys

from refil.harness.cli import main

sys.exit(main())
