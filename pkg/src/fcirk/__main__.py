import sys

from fcirk.cli import main

sys.exit(main())
