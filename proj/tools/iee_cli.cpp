#include "iee/cli.hpp"

int main(int argc, char** argv) { return iee::cli::run(argc, argv); }
