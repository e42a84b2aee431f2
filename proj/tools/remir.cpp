#include "remir/cli.hpp"

int main(int argc, char** argv) { return remir::run_cli(argc, argv); }
