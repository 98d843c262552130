from stimfolio.cli import main

raise SystemExit(main())
