import sys

from resilsim.cli import main

sys.exit(main())
