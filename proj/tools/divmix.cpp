#include "divmix/cli.hpp"

int main(int argc, char** argv) { return divmix::cli::run(argc, argv); }
