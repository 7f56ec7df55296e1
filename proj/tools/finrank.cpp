#include "finrank/cli.hpp"

int main(int argc, char** argv) { return finrank::cli::main(argc, argv); }
