#include "eplff/cli.hpp"

int main(int argc, char** argv) { return eplff::cli::main(argc, argv); }
