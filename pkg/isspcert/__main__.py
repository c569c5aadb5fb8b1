import sys

from isspcert.cli import main

sys.exit(main())
