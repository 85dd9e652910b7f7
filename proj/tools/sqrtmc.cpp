#include "sqrtmc/cli.hpp"

int main(int argc, char **argv) { return sqrtmc::cli::run_cli(argc, argv); }
