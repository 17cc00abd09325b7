from ccminer.cli import main
import sys

sys.exit(main())
