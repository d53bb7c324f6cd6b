import sys

from moka.cli import main

sys.exit(main())
