#include "whatif/cli.hpp"

int main(int argc, char** argv) { return whatif::cli::run(argc, argv); }
