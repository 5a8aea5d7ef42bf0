#include "dcoach/cli/cli.hpp"

int main(int argc, char** argv) { return dcoach::cli::run(argc, argv); }
