import sys

from ikforge.cli import main

sys.exit(main())
