import sys

from vipspp.cli import main

sys.exit(main())
