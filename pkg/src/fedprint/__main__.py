import sys

from fedprint.cli import main

sys.exit(main())
