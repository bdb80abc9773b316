#include "semiblind/cli.hpp"

int main(int argc, char** argv) { return semiblind::cli::run(argc, argv); }
