#include "home/cli.hpp"

int main(int argc, char** argv) { return home::cli_main(argc, argv); }
