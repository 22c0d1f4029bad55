#include "dart/cli.hpp"

int main(int argc, char** argv) { return dart::run_cli(argc, argv); }
