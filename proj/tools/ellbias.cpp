#include "ellbias/cli.hpp"

int main(int argc, char** argv) { return ellbias::cli::run(argc, argv); }
