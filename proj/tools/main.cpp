#include "vipde/cli.hpp"

int main(int argc, char** argv) { return vipde::cli::main(argc, argv); }
