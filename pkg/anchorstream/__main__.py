import sys

from anchorstream.main import main

sys.exit(main())
