import sys

from epo.cli import main

sys.exit(main())
