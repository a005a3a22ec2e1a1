#include "depfusion/cli.hpp"

int main(int argc, char** argv) { return depfusion::cli::run(argc, argv); }
