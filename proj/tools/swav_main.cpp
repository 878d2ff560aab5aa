#include "swav/cli.hpp"

int main(int argc, char** argv) { return swav::cli::run(argc, argv); }
