#include "poi/cli.hpp"

int main(int argc, char** argv) { return poi::run_cli(argc, argv); }
