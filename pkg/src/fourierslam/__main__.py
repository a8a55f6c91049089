import sys

from fourierslam.cli import main

sys.exit(main())
