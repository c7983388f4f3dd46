import sys

from emrgraph.cli import main

sys.exit(main())
