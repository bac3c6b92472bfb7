#include "dyn4d/cli.hpp"

int main(int argc, char **argv) { return dyn4d::cli_main(argc, argv); }
