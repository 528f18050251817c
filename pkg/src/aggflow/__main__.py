import sys

from aggflow.harness.cli import main

sys.exit(main())
