import sys

from vcmoe.cli import main

sys.exit(main())
