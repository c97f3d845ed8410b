import sys

from rydgate.cli import main

sys.exit(main())
