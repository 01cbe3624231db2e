import sys

from thcid.cli import main

sys.exit(main())
