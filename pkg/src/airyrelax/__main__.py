from airyrelax.cli import main

main()
