import sys

from beltwear.cli import main

sys.exit(main())
