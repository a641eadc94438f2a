import sys

from drowsyrank.cli import main

sys.exit(main())
