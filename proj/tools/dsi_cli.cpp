#include "dsi/cli.hpp"

int main(int argc, char** argv) { return dsi::cli::run(argc, argv); }
