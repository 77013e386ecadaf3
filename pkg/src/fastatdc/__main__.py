import sys

from fastatdc.cli import main

sys.exit(main())
