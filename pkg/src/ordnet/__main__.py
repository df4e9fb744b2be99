import sys

from ordnet.cli import main

sys.exit(main())
