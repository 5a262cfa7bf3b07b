import sys

from crest.experiments.cli import main

sys.exit(main())
