#include "fpmc/cli.hpp"

int main(int argc, char** argv) { return fpmc::run_cli(argc, argv); }
