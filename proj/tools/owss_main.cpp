#include "owss/cli.hpp"

int main(int argc, char** argv) { return owss::cli_main(argc, argv); }
