#include "cli.hpp"

int main(int argc, char** argv) { return nytune::cli_main(argc, argv); }
