from chainfactor.cli import main

raise SystemExit(main())
