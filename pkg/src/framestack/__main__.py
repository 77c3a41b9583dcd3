import sys

from framestack.cli import main

sys.exit(main())
