#include "fedlogit/cli.hpp"

int main(int argc, char** argv) { return fedlogit::run_cli(argc, argv); }
