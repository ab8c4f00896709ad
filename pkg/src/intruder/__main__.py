from intruder.cli import main
main()
