namespace nytune { int cli_main(int, char**); }
