from powerseek.cli import main

raise SystemExit(main())
